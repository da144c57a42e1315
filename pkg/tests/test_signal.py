import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biosent.errors import (
    DuplicateChannel,
    EmptyChannel,
    InvalidRate,
    MalformedHeader,
    TooShort,
    UnknownChannel,
)
from biosent.signal import (
    ChannelTrace,
    ChannelVocabulary,
    RawRecording,
    load_recording,
    merge_intervals,
    normalize_channel,
    percentile_linear,
    resample,
    save_recording,
)

from oracles import percentile_by_sort


def f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def test_bsr_two_channels_125hz_30s(tmp_path, rng):
    chans = tuple(ChannelTrace(cid, 125.0, f32(rng.normal(size=3750))) for cid in ("Fp1", "Fp2"))
    rec = RawRecording("r1", chans)
    save_recording(rec, tmp_path / "r1")
    back = load_recording(tmp_path / "r1.bsr.json")
    assert [c.n_samples for c in back.channels] == [3750, 3750]
    assert back.channels[0].duration == 30.0


def test_bsr_round_trip_is_bit_exact(tmp_path, rng):
    rec = RawRecording(
        "x",
        (
            ChannelTrace("A", 200.0, f32(rng.normal(size=400)), ((0.5, 1.0),)),
            ChannelTrace("B", 100.0, f32(rng.normal(size=150))),
        ),
        label=3,
    )
    path = save_recording(rec, tmp_path / "x")
    back = load_recording(path)
    assert back.id == rec.id and back.label == 3
    for a, b in zip(rec.channels, back.channels):
        assert a.channel_id == b.channel_id and a.rate_hz == b.rate_hz
        assert a.missing_intervals == b.missing_intervals
        assert a.samples.tobytes() == b.samples.tobytes()
    blob = (tmp_path / "x.bsr.f32").read_bytes()
    save_recording(back, tmp_path / "y")
    assert (tmp_path / "y.bsr.f32").read_bytes() == blob


def test_csv_three_rows(tmp_path):
    p = tmp_path / "rec.csv"
    p.write_text("t,Fp1,Fp2\n0.0,1,2\n0.01,3,4\n0.02,5,6\n")
    rec = load_recording(p)
    assert rec.channel_ids == ["Fp1", "Fp2"]
    assert [c.n_samples for c in rec.channels] == [3, 3]
    assert rec.channels[0].rate_hz == pytest.approx(100.0)
    np.testing.assert_array_equal(rec.channel("Fp2").samples, [2, 4, 6])


def test_duplicate_channel_errors(tmp_path):
    p = tmp_path / "dup.csv"
    p.write_text("t,A,A\n0,1,2\n1,3,4\n")
    with pytest.raises(DuplicateChannel):
        load_recording(p)
    with pytest.raises(DuplicateChannel):
        RawRecording("r", (ChannelTrace("A", 1.0, [1.0]), ChannelTrace("A", 1.0, [2.0])))


def test_parse_errors_are_distinct(tmp_path):
    (tmp_path / "bad.bsr.json").write_text("{not json")
    (tmp_path / "bad.bsr.f32").write_bytes(b"")
    with pytest.raises(MalformedHeader):
        load_recording(tmp_path / "bad")

    header = {"id": "r", "channels": [{"channel_id": "A", "rate_hz": 0, "n_samples": 1, "missing": []}]}
    (tmp_path / "rate.bsr.json").write_text(json.dumps(header))
    (tmp_path / "rate.bsr.f32").write_bytes(np.zeros(1, "<f4").tobytes())
    with pytest.raises(InvalidRate):
        load_recording(tmp_path / "rate")

    rec = RawRecording("r", (ChannelTrace("Z9", 10.0, np.zeros(4, np.float32)),))
    save_recording(rec, tmp_path / "unk")
    with pytest.raises(UnknownChannel):
        load_recording(tmp_path / "unk", vocab=ChannelVocabulary(["A"]))


def test_blob_size_mismatch_is_malformed(tmp_path, rng):
    rec = RawRecording("r", (ChannelTrace("A", 10.0, f32(rng.normal(size=20))),))
    save_recording(rec, tmp_path / "r")
    blob = tmp_path / "r.bsr.f32"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(MalformedHeader):
        load_recording(tmp_path / "r")


def test_trace_invariants():
    with pytest.raises(InvalidRate):
        ChannelTrace("A", 0.0, [1.0])
    with pytest.raises(ValueError):
        ChannelTrace("A", 1.0, [1.0, 2.0], ((0.5, 3.0),))  # beyond duration
    with pytest.raises(ValueError):
        RawRecording("empty", ())
    t = ChannelTrace("A", 2.0, [0, 1, 2, 3], ((0.0, 0.5), (0.5, 1.0)))
    assert t.samples.flags.writeable is False
    assert t.duration == 2.0


def test_merge_intervals():
    assert merge_intervals([(2, 3), (0, 1), (0.5, 1.5)]) == [(0, 1.5), (2, 3)]
    assert merge_intervals([]) == []


class TestVocabulary:
    def test_dense_indices_and_lookup(self):
        v = ChannelVocabulary(["Fp1", "Fp2"])
        assert v.index("Fp2") == 1
        assert v.add("C3") == 2 and v.add("Fp1") == 0
        with pytest.raises(UnknownChannel):
            v.index("nope")

    def test_extended_keeps_old_indices(self):
        v = ChannelVocabulary(["a", "b"])
        w = v.extended(["c", "a", "d"])
        assert w.ids == ["a", "b", "c", "d"] and v.ids == ["a", "b"]

    def test_from_recordings_first_seen_order(self):
        r1 = RawRecording("1", (ChannelTrace("B", 1, [0.0]), ChannelTrace("A", 1, [0.0])))
        r2 = RawRecording("2", (ChannelTrace("C", 1, [0.0]), ChannelTrace("A", 1, [0.0])))
        assert ChannelVocabulary.from_recordings([r1, r2]).ids == ["B", "A", "C"]


# ---------------------------------------------------------------------------
# resampling


def test_resample_same_rate_is_identity(rng):
    t = ChannelTrace("A", 200.0, rng.normal(size=50))
    assert resample(t, 200.0).samples.tobytes() == t.samples.tobytes()


@pytest.mark.parametrize("src,dst", [(100, 250), (250, 100), (200, 173)])
def test_resample_constant(src, dst):
    t = ChannelTrace("A", float(src), np.full(300, 2.5))
    out = resample(t, float(dst))
    assert out.n_samples == round(300 * dst / src)
    np.testing.assert_allclose(out.samples, 2.5, rtol=0, atol=1e-12)


def test_resample_ramp_doubling():
    t = ChannelTrace("A", 10.0, np.linspace(0, 1, 11))
    out = resample(t, 20.0)
    assert out.n_samples == 22
    assert out.samples[0] == 0.0 and out.samples[-1] == 1.0
    np.testing.assert_allclose(out.samples, np.linspace(0, 1, 22), atol=1e-12)


def test_resample_matches_loop_interpolation(rng):
    x = rng.normal(size=37)
    out = resample(ChannelTrace("A", 37.0, x), 91.0).samples
    n, n2 = len(x), len(out)
    for j in range(n2):
        pos = j * (n - 1) / (n2 - 1)
        lo = min(int(np.floor(pos)), n - 2)
        frac = pos - lo
        assert out[j] == pytest.approx(x[lo] * (1 - frac) + x[lo + 1] * frac, abs=1e-12)


def test_resample_keeps_missing_intervals():
    t = ChannelTrace("A", 100.0, np.zeros(500), ((1.0, 2.0), (3.5, 4.0)))
    assert resample(t, 200.0).missing_intervals == ((1.0, 2.0), (3.5, 4.0))


def test_resample_too_short():
    with pytest.raises(TooShort):
        resample(ChannelTrace("A", 10.0, [1.0]), 20.0)


@pytest.mark.parametrize("r2", [173.0, 256.0, 500.0])
def test_resample_round_trip_band_limited(r2):
    r, n = 200.0, 2000
    tt = np.arange(n) / r
    x = np.sin(2 * np.pi * 3.0 * tt)
    back = resample(resample(ChannelTrace("A", r, x), r2), r)
    assert back.n_samples == n
    assert np.max(np.abs(back.samples - x)) < 1e-2


# ---------------------------------------------------------------------------
# normalization


def test_normalize_constant_two():
    out = normalize_channel(ChannelTrace("A", 1.0, np.full(10, 2.0)))
    np.testing.assert_array_equal(out.samples, 1.0)


def test_normalize_all_zero_no_nan():
    out = normalize_channel(ChannelTrace("A", 1.0, np.zeros(10)))
    assert np.all(out.samples == 0) and np.all(np.isfinite(out.samples))


def test_normalize_ramp_1_to_100():
    x = np.arange(1, 101, dtype=float)
    assert percentile_by_sort(x, 95) == pytest.approx(95.05, abs=1e-12)
    out = normalize_channel(ChannelTrace("A", 1.0, x))
    assert out.samples.max() == pytest.approx(100 / 95.05, rel=1e-12)


def test_normalize_empty():
    with pytest.raises(EmptyChannel):
        normalize_channel(ChannelTrace("A", 1.0, []))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.sampled_from([0, 5, 50, 95, 100]))
def test_percentile_matches_sort_oracle(xs, q):
    assert percentile_linear(np.array(xs), q) == pytest.approx(percentile_by_sort(xs, q), rel=1e-12, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_normalize_scale_invariant(seed, c):
    x = np.random.default_rng(seed).normal(size=64)
    a = normalize_channel(ChannelTrace("A", 1.0, x)).samples
    b = normalize_channel(ChannelTrace("A", 1.0, c * x)).samples
    np.testing.assert_allclose(b, a, rtol=1e-12, atol=0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 200))
def test_normalized_percentile_is_one(seed, n):
    x = np.random.default_rng(seed).standard_cauchy(size=n)
    out = normalize_channel(ChannelTrace("A", 1.0, x)).samples
    assert abs(percentile_by_sort(np.abs(out), 95) - 1.0) <= 1e-9
