"""Raw multi-channel recordings: containers, file I/O, resampling, normalization."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateChannel,
    EmptyChannel,
    InvalidRate,
    MalformedHeader,
    ParseError,
    TooShort,
    UnknownChannel,
)

NORM_EPS = 1e-8
NORM_PERCENTILE = 95.0


def _check_intervals(intervals, duration):
    out = []
    prev_end = -math.inf
    for iv in intervals:
        if len(iv) != 2:
            raise ValueError(f"missing interval must be [start, end), got {iv!r}")
        s, e = float(iv[0]), float(iv[1])
        if not (0.0 <= s < e):
            raise ValueError(f"bad missing interval [{s}, {e})")
        if s < prev_end:
            raise ValueError("missing intervals must be sorted and disjoint")
        # tolerate float noise at the end of the recording
        if e > duration + 1e-9:
            raise ValueError(f"missing interval [{s}, {e}) exceeds duration {duration}")
        out.append((s, e))
        prev_end = e
    return tuple(out)


def merge_intervals(intervals: Iterable[Sequence[float]]) -> list[tuple[float, float]]:
    """Sort and merge half-open intervals; touching intervals are merged."""
    ivs = sorted((float(s), float(e)) for s, e in intervals if e > s)
    merged: list[list[float]] = []
    for s, e in ivs:
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


@dataclass(frozen=True)
class ChannelTrace:
    channel_id: str
    rate_hz: float
    samples: np.ndarray
    missing_intervals: tuple = ()

    def __post_init__(self):
        if not (self.rate_hz > 0 and math.isfinite(self.rate_hz)):
            raise InvalidRate(f"channel {self.channel_id!r}: rate must be > 0, got {self.rate_hz}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(
            self, "missing_intervals", _check_intervals(self.missing_intervals, self.duration)
        )

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        """Duration J in seconds."""
        return self.n_samples / self.rate_hz


@dataclass(frozen=True)
class RawRecording:
    id: str
    channels: tuple
    label: int | None = None

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans:
            raise ValueError(f"recording {self.id!r} has no channels")
        seen = set()
        for ch in chans:
            if ch.channel_id in seen:
                raise DuplicateChannel(f"recording {self.id!r}: duplicate channel {ch.channel_id!r}")
            seen.add(ch.channel_id)
        object.__setattr__(self, "channels", chans)

    @property
    def channel_ids(self) -> list[str]:
        return [c.channel_id for c in self.channels]

    def channel(self, channel_id: str) -> ChannelTrace:
        for c in self.channels:
            if c.channel_id == channel_id:
                return c
        raise KeyError(channel_id)

    def without_channels(self, drop: Iterable[str]) -> "RawRecording":
        drop = set(drop)
        return replace(self, channels=tuple(c for c in self.channels if c.channel_id not in drop))


@dataclass
class ChannelVocabulary:
    """Global channel-id table; indices are dense and append-only."""

    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.ids = list(self.ids)
        self._index = {}
        for i, cid in enumerate(self.ids):
            if cid in self._index:
                raise DuplicateChannel(f"duplicate vocabulary entry {cid!r}")
            self._index[cid] = i

    def __len__(self):
        return len(self.ids)

    def __contains__(self, cid):
        return cid in self._index

    def __eq__(self, other):
        return isinstance(other, ChannelVocabulary) and self.ids == other.ids

    def index(self, cid: str) -> int:
        try:
            return self._index[cid]
        except KeyError:
            raise UnknownChannel(f"channel {cid!r} is not in the vocabulary") from None

    def add(self, cid: str) -> int:
        if cid not in self._index:
            self._index[cid] = len(self.ids)
            self.ids.append(cid)
        return self._index[cid]

    def extended(self, cids: Iterable[str]) -> "ChannelVocabulary":
        out = ChannelVocabulary(self.ids)
        for c in cids:
            out.add(c)
        return out

    @classmethod
    def from_recordings(cls, recordings: Iterable[RawRecording]) -> "ChannelVocabulary":
        vocab = cls()
        for rec in recordings:
            for cid in rec.channel_ids:
                vocab.add(cid)
        return vocab


# ---------------------------------------------------------------------------
# preprocessing


def percentile_linear(values: np.ndarray, q: float) -> float:
    """Percentile by linear interpolation between order statistics at rank q/100·(n−1)."""
    return float(np.percentile(np.asarray(values, dtype=np.float64), q, method="linear"))


def resample(trace: ChannelTrace, target_rate: float) -> ChannelTrace:
    """Linear-interpolation resampling that keeps the first and last sample fixed."""
    if not target_rate > 0:
        raise InvalidRate(f"target rate must be > 0, got {target_rate}")
    n = trace.n_samples
    if n < 2:
        raise TooShort(f"channel {trace.channel_id!r}: need >= 2 samples to resample, got {n}")
    if target_rate == trace.rate_hz:
        return trace
    n_out = int(round(n * target_rate / trace.rate_hz))
    if n_out < 1:
        raise TooShort(f"channel {trace.channel_id!r}: resampling to {target_rate} Hz leaves no samples")
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_out) * ((n - 1) / (n_out - 1))
    out = np.interp(pos, np.arange(n, dtype=np.float64), trace.samples)
    return ChannelTrace(trace.channel_id, float(target_rate), out, _clip_missing(trace.missing_intervals, n_out / target_rate))


def _clip_missing(intervals, duration):
    out = []
    for s, e in intervals:
        e = min(e, duration)
        if e > s:
            out.append((s, e))
    return tuple(out)


def normalize_channel(trace: ChannelTrace) -> ChannelTrace:
    """Divide a channel by the 95th percentile of its absolute amplitude."""
    if trace.n_samples == 0:
        raise EmptyChannel(f"channel {trace.channel_id!r} is empty")
    q = percentile_linear(np.abs(trace.samples), NORM_PERCENTILE)
    if q < NORM_EPS:
        q = NORM_EPS
    return replace(trace, samples=trace.samples / q)


# ---------------------------------------------------------------------------
# file formats


def _bsr_paths(path) -> tuple[Path, Path]:
    p = str(path)
    for suffix in (".bsr.json", ".bsr.f32"):
        if p.endswith(suffix):
            p = p[: -len(suffix)]
            break
    return Path(p + ".bsr.json"), Path(p + ".bsr.f32")


def save_recording(recording: RawRecording, path) -> Path:
    """Write ``<name>.bsr.json`` + ``<name>.bsr.f32``; returns the header path."""
    header_path, blob_path = _bsr_paths(path)
    header = {
        "id": recording.id,
        "channels": [
            {
                "channel_id": c.channel_id,
                "rate_hz": c.rate_hz,
                "n_samples": c.n_samples,
                "missing": [[s, e] for s, e in c.missing_intervals],
            }
            for c in recording.channels
        ],
    }
    if recording.label is not None:
        header["label"] = int(recording.label)
    blob = b"".join(c.samples.astype("<f4").tobytes() for c in recording.channels)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(blob_path, blob)
    _atomic_write(header_path, (json.dumps(header, indent=1) + "\n").encode("utf-8"))
    return header_path


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _validate_ids(recording: RawRecording, vocab: ChannelVocabulary | None):
    if vocab is None:
        return
    unknown = [cid for cid in recording.channel_ids if cid not in vocab]
    if unknown:
        raise UnknownChannel(
            f"recording {recording.id!r}: channels not in vocabulary: {unknown}", details=unknown
        )


def _load_bsr(path) -> RawRecording:
    header_path, blob_path = _bsr_paths(path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{header_path}: invalid JSON ({exc})") from exc
    if not isinstance(header, dict) or "id" not in header or not isinstance(header.get("channels"), list):
        raise MalformedHeader(f"{header_path}: header needs 'id' and a 'channels' list")
    blob = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    channels = []
    offset = 0
    ids = set()
    for i, ch in enumerate(header["channels"]):
        try:
            cid = str(ch["channel_id"])
            rate = float(ch["rate_hz"])
            n = int(ch["n_samples"])
            missing = [tuple(m) for m in ch.get("missing", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedHeader(f"{header_path}: channel entry {i} is malformed ({exc})") from exc
        if not rate > 0:
            raise InvalidRate(f"{header_path}: channel {cid!r} has rate {rate}")
        if cid in ids:
            raise DuplicateChannel(f"{header_path}: duplicate channel {cid!r}")
        ids.add(cid)
        if n < 0 or offset + n > blob.size:
            raise MalformedHeader(f"{header_path}: sample counts exceed blob size {blob.size}")
        try:
            channels.append(ChannelTrace(cid, rate, blob[offset:offset + n].astype(np.float64), missing))
        except ParseError:
            raise
        except ValueError as exc:
            raise MalformedHeader(f"{header_path}: channel {cid!r}: {exc}") from exc
        offset += n
    if offset != blob.size:
        raise MalformedHeader(f"{header_path}: blob has {blob.size} samples, header declares {offset}")
    label = header.get("label")
    return RawRecording(str(header["id"]), tuple(channels), None if label is None else int(label))


def _load_csv(path) -> RawRecording:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0].strip() != "t":
        raise MalformedHeader(f"{path}: first column must be 't'")
    names = [c.strip() for c in rows[0][1:]]
    if not names:
        raise MalformedHeader(f"{path}: no channel columns")
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise DuplicateChannel(f"{path}: duplicate channel columns {dup}", details=dup)
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise MalformedHeader(f"{path}: non-numeric cell ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(names) + 1:
        raise MalformedHeader(f"{path}: ragged rows")
    if data.shape[0] < 2:
        raise MalformedHeader(f"{path}: need >= 2 rows to infer the sampling rate")
    steps = np.diff(data[:, 0])
    step = float(steps.mean())
    if not step > 0:
        raise InvalidRate(f"{path}: time column must increase")
    if np.max(np.abs(steps - step)) > 1e-6 * max(1.0, abs(step)):
        raise MalformedHeader(f"{path}: time column is not uniformly spaced")
    rate = 1.0 / step
    chans = tuple(ChannelTrace(n, rate, data[:, j + 1]) for j, n in enumerate(names))
    return RawRecording(path.name.split(".")[0], chans)


def load_recording(path, format: str | None = None, vocab: ChannelVocabulary | None = None) -> RawRecording:
    """Load a recording from BSR (json header + f32 blob) or CSV."""
    if format is None:
        format = "csv" if str(path).endswith(".csv") else "bsr"
    if format == "bsr":
        rec = _load_bsr(path)
    elif format == "csv":
        rec = _load_csv(path)
    else:
        raise ValueError(f"unknown recording format {format!r}")
    _validate_ids(rec, vocab)
    return rec
