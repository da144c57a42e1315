"""Synthetic band-frequency corpora and missing-data masks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .signal import ChannelTrace, RawRecording, load_recording, merge_intervals, save_recording

BANDS_HZ = ((1.0, 4.0), (4.0, 8.0), (8.0, 12.0), (12.0, 30.0), (30.0, 70.0))

CHANNEL_NAMES = (
    "Fp1", "Fp2", "F3", "F4", "C3", "C4", "P3", "P4",
    "O1", "O2", "F7", "F8", "T3", "T4", "T5", "T6",
)

MASK_MODES = ("segments", "channels", "both")
MASK_STRATEGIES = ("drop_tokens", "zero_impute")


def channel_names(n: int, offset: int = 0) -> list[str]:
    names = list(CHANNEL_NAMES) + [f"CH{i:02d}" for i in range(len(CHANNEL_NAMES), offset + n)]
    return names[offset:offset + n]


@dataclass(frozen=True)
class SynthTaskConfig:
    n_classes: int = 5
    n_channels: int = 4
    duration_s: float = 10.0
    rate_hz: float = 200.0
    snr: float = 2.0
    seed: int = 0
    channel_offset: int = 0

    def __post_init__(self):
        if not 1 <= self.n_classes <= len(BANDS_HZ):
            raise ValueError(f"n_classes must be in [1, {len(BANDS_HZ)}]")
        top = BANDS_HZ[self.n_classes - 1][1]
        if top >= self.rate_hz / 2:
            raise ValueError(f"band up to {top} Hz is not below Nyquist ({self.rate_hz / 2} Hz)")
        if self.n_channels < 1 or self.duration_s <= 0 or self.snr <= 0:
            raise ValueError("n_channels >= 1, duration_s > 0 and snr > 0 required")

    @property
    def channel_ids(self) -> list[str]:
        return channel_names(self.n_channels, self.channel_offset)


def generate_sample(cfg: SynthTaskConfig, rng: np.random.Generator, sample_id: str, label: int | None = None) -> RawRecording:
    if label is None:
        label = int(rng.integers(cfg.n_classes))
    lo, hi = BANDS_HZ[label]
    freq = rng.uniform(lo, hi)
    n = int(round(cfg.duration_s * cfg.rate_hz))
    t = np.arange(n) / cfg.rate_hz
    chans = []
    for cid in cfg.channel_ids:
        phase = rng.uniform(0, 2 * np.pi)
        x = np.sin(2 * np.pi * freq * t + phase) + rng.normal(0.0, 1.0 / cfg.snr, size=n)
        # float32 storage keeps BSR save/load bit-exact
        chans.append(ChannelTrace(cid, cfg.rate_hz, x.astype(np.float32).astype(np.float64)))
    return RawRecording(sample_id, tuple(chans), label)


def generate_dataset(cfg: SynthTaskConfig, n_samples: int, prefix: str = "s") -> list[RawRecording]:
    """Labelled recordings, one per seed-derived child stream so output is deterministic."""
    children = np.random.SeedSequence(cfg.seed).spawn(n_samples)
    return [
        generate_sample(cfg, np.random.default_rng(ss), f"{prefix}{i:05d}")
        for i, ss in enumerate(children)
    ]


def write_corpus(recordings, out_dir) -> Path:
    """BSR files plus ``labels.csv`` (id, class)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in recordings:
        save_recording(rec, out / rec.id)
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "class"])
        for rec in recordings:
            w.writerow([rec.id, "" if rec.label is None else rec.label])
    return out


def read_corpus(corpus_dir, vocab=None) -> list[RawRecording]:
    """Recordings of a corpus directory; ``labels.csv`` overrides header labels."""
    d = Path(corpus_dir)
    labels = {}
    lab_path = d / "labels.csv"
    if lab_path.exists():
        with open(lab_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                labels[row["id"]] = int(row["class"]) if row["class"] not in ("", None) else None
    recs = []
    for header in sorted(d.glob("*.bsr.json")):
        rec = load_recording(header, "bsr", vocab)
        if rec.id in labels:
            rec = replace(rec, label=labels[rec.id])
        recs.append(rec)
    return recs


# ---------------------------------------------------------------------------
# masking


@dataclass(frozen=True)
class MaskSpec:
    mode: str = "both"
    a: int = 0
    b: int = 0
    segment_len_s: float = 0.5
    strategy: str = "drop_tokens"

    def __post_init__(self):
        if self.mode not in MASK_MODES:
            raise ValueError(f"mode must be one of {MASK_MODES}")
        if self.strategy not in MASK_STRATEGIES:
            raise ValueError(f"strategy must be one of {MASK_STRATEGIES}")
        if not 0 <= self.a <= 5:
            raise ValueError("a (segments per channel) must be in 0..5")
        if not 0 <= self.b <= 4:
            raise ValueError("b (masked channels) must be in 0..4")

    @property
    def segments(self) -> int:
        return self.a if self.mode in ("segments", "both") else 0

    @property
    def channels(self) -> int:
        return self.b if self.mode in ("channels", "both") else 0


def _segment_starts(n: int, seg: int, count: int, rng: np.random.Generator, max_tries: int = 1000) -> list[int]:
    """``count`` non-overlapping segment starts drawn uniformly in ``[0, n - seg]``."""
    if count == 0:
        return []
    if count * seg > n:
        raise ValueError(f"cannot place {count} segments of {seg} samples in {n} samples")
    for _ in range(max_tries):
        starts = np.sort(rng.integers(0, n - seg + 1, size=count))
        if count == 1 or np.all(np.diff(starts) >= seg):
            return [int(s) for s in starts]
    # dense packing: fall back to aligned slots
    slots = rng.choice(n // seg, size=count, replace=False)
    return sorted(int(s) * seg for s in slots)


def apply_mask(recording: RawRecording, spec: MaskSpec, rng: np.random.Generator) -> RawRecording:
    """Simulate missing channels/segments; labels are never touched.

    ``drop_tokens`` removes channels and records masked spans as missing
    intervals (so the tokenizer drops the touching tokens); ``zero_impute``
    overwrites the same regions with zeros and keeps every sample.
    """
    n_ch = len(recording.channels)
    if spec.channels >= n_ch:
        raise ValueError(f"cannot mask {spec.channels} of {n_ch} channels")
    masked = set()
    if spec.channels:
        masked = set(rng.choice(recording.channel_ids, size=spec.channels, replace=False).tolist())
    out = []
    for ch in recording.channels:
        if ch.channel_id in masked:
            if spec.strategy == "zero_impute":
                out.append(replace(ch, samples=np.zeros(ch.n_samples)))
            continue
        seg = int(round(spec.segment_len_s * ch.rate_hz))
        starts = _segment_starts(ch.n_samples, seg, spec.segments, rng)
        if not starts:
            out.append(ch)
        elif spec.strategy == "zero_impute":
            x = ch.samples.copy()
            for s in starts:
                x[s:s + seg] = 0.0
            out.append(replace(ch, samples=x))
        else:
            spans = [(s / ch.rate_hz, (s + seg) / ch.rate_hz) for s in starts]
            out.append(replace(ch, missing_intervals=tuple(merge_intervals(list(ch.missing_intervals) + spans))))
    return replace(recording, channels=tuple(out))
