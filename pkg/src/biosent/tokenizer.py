"""Channel-wise tokenization of recordings into flat biosignal sentences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySentence, InvalidOverlap, RateMismatch, UnknownChannel
from .signal import ChannelTrace, ChannelVocabulary, RawRecording, normalize_channel, resample

_FLOOR_TOL = 1e-9


@dataclass(frozen=True)
class TokenizerConfig:
    rate_hz: float = 200.0
    token_len_s: float = 1.0
    overlap_s: float = 0.5

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be > 0, got {self.rate_hz}")
        if not (0 <= self.overlap_s < self.token_len_s):
            raise InvalidOverlap(
                f"need 0 <= overlap < token length, got p={self.overlap_s}, t={self.token_len_s}"
            )
        if self.token_samples < 2:
            raise ValueError(f"token must span >= 2 samples, got {self.token_samples}")

    @property
    def token_samples(self) -> int:
        """m = round(t·r)."""
        return int(round(self.token_len_s * self.rate_hz))

    @property
    def stride_s(self) -> float:
        return self.token_len_s - self.overlap_s

    def start_sample(self, k: int) -> int:
        """First sample index of the k-th token (k >= 1)."""
        return int(round(self.stride_s * (k - 1) * self.rate_hz))


@dataclass(frozen=True)
class Token:
    channel_index: int
    position: int
    values: np.ndarray


def tokens_per_channel(duration_s: float, token_len_s: float, overlap_s: float) -> int:
    """Largest k with (t−p)(k−1) + t <= J, or 0 when J < t."""
    if not (0 <= overlap_s < token_len_s):
        raise InvalidOverlap(f"need 0 <= p < t, got p={overlap_s}, t={token_len_s}")
    if duration_s < 0:
        raise ValueError("duration must be >= 0")
    if duration_s + _FLOOR_TOL < token_len_s:
        return 0
    return int(math.floor((duration_s - token_len_s) / (token_len_s - overlap_s) + _FLOOR_TOL)) + 1


class BiosignalSentence:
    """Flat, channel-major sequence of equal-length tokens.

    Tokens are stored column-wise (``channel_index``, ``position``, ``values``)
    so that batches of sentences can be stacked without copying token objects.
    """

    __slots__ = ("channel_index", "position", "values", "config", "_features")

    def __init__(self, channel_index, position, values, config: TokenizerConfig | None = None):
        self.channel_index = np.asarray(channel_index, dtype=np.int64).reshape(-1)
        self.position = np.asarray(position, dtype=np.int64).reshape(-1)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            m = config.token_samples if config is not None else 0
            values = values.reshape(-1, m)
        self.values = values
        self.config = config
        self._features = {}
        n = len(self.channel_index)
        if len(self.position) != n or self.values.shape[0] != n:
            raise ValueError("token column lengths disagree")
        if n and self.position.min() < 1:
            raise ValueError("token positions must be >= 1")

    @classmethod
    def from_tokens(cls, tokens, config: TokenizerConfig | None = None) -> "BiosignalSentence":
        tokens = list(tokens)
        m = config.token_samples if config is not None else (len(tokens[0].values) if tokens else 0)
        values = np.stack([t.values for t in tokens]) if tokens else np.zeros((0, m))
        return cls([t.channel_index for t in tokens], [t.position for t in tokens], values, config)

    def __len__(self):
        return int(self.channel_index.shape[0])

    @property
    def token_len(self) -> int:
        return int(self.values.shape[1])

    @property
    def tokens(self) -> list[Token]:
        return [
            Token(int(c), int(k), self.values[j])
            for j, (c, k) in enumerate(zip(self.channel_index, self.position))
        ]

    def select(self, keep) -> "BiosignalSentence":
        """Sub-sentence from a boolean mask or index array (order preserved)."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        keep = np.sort(keep)
        out = BiosignalSentence(
            self.channel_index[keep], self.position[keep], self.values[keep], self.config
        )
        for key, feats in self._features.items():
            out._features[key] = feats[keep]
        return out

    def without_channel(self, channel_index: int) -> "BiosignalSentence":
        return self.select(self.channel_index != channel_index)

    def features(self, mode: str = "log") -> np.ndarray:
        """Per-token spectral features, computed once and cached."""
        if mode not in self._features:
            from .spectral import energy_features

            self._features[mode] = energy_features(self.values, mode=mode)
        return self._features[mode]

    def token_set(self) -> set:
        return {
            (int(c), int(k), self.values[j].tobytes())
            for j, (c, k) in enumerate(zip(self.channel_index, self.position))
        }

    def __repr__(self):
        return f"BiosignalSentence(n_tokens={len(self)}, token_len={self.token_len})"


def _overlaps_missing(start_s, end_s, intervals) -> bool:
    for a, b in intervals:
        if start_s < b and a < end_s:
            return True
    return False


def tokenize_channel(trace: ChannelTrace, cfg: TokenizerConfig, channel_index: int = 0) -> list[Token]:
    """Split one channel into t-second tokens at stride t−p, dropping tokens that touch missing data."""
    if trace.rate_hz != cfg.rate_hz:
        raise RateMismatch(f"channel {trace.channel_id!r} is at {trace.rate_hz} Hz, tokenizer expects {cfg.rate_hz} Hz")
    starts, positions = _channel_layout(trace, cfg)
    m = cfg.token_samples
    return [
        Token(channel_index, int(k), trace.samples[s:s + m].copy())
        for s, k in zip(starts, positions)
    ]


def _channel_layout(trace: ChannelTrace, cfg: TokenizerConfig):
    m = cfg.token_samples
    n = trace.n_samples
    count = tokens_per_channel(trace.duration, cfg.token_len_s, cfg.overlap_s)
    starts, positions = [], []
    for k in range(1, count + 1):
        s = cfg.start_sample(k)
        if s + m > n:
            # sample rounding can push the last token one sample past the end
            break
        if trace.missing_intervals and _overlaps_missing(
            s / cfg.rate_hz, (s + m) / cfg.rate_hz, trace.missing_intervals
        ):
            continue
        starts.append(s)
        positions.append(k)
    return starts, positions


def preprocess_channel(trace: ChannelTrace, cfg: TokenizerConfig) -> ChannelTrace:
    """Resample to the target rate, then percentile-normalize."""
    if trace.rate_hz != cfg.rate_hz:
        trace = resample(trace, cfg.rate_hz)
    return normalize_channel(trace)


def build_sentence(recording: RawRecording, cfg: TokenizerConfig, vocab: ChannelVocabulary) -> BiosignalSentence:
    """Resample, normalize and tokenize every channel, then flatten channel-major in vocabulary order."""
    unknown = [cid for cid in recording.channel_ids if cid not in vocab]
    if unknown:
        raise UnknownChannel(f"recording {recording.id!r}: channels not in vocabulary: {unknown}", details=unknown)
    ordered = sorted(recording.channels, key=lambda c: vocab.index(c.channel_id))
    m = cfg.token_samples
    chan_idx, pos, vals = [], [], []
    for trace in ordered:
        if trace.n_samples == 0:
            continue
        trace = preprocess_channel(trace, cfg)
        starts, positions = _channel_layout(trace, cfg)
        if not starts:
            continue
        ci = vocab.index(trace.channel_id)
        idx = np.asarray(starts)[:, None] + np.arange(m)[None, :]
        vals.append(trace.samples[idx])
        chan_idx.append(np.full(len(starts), ci))
        pos.append(np.asarray(positions))
    if not vals:
        raise EmptySentence(f"recording {recording.id!r} produced no tokens")
    return BiosignalSentence(np.concatenate(chan_idx), np.concatenate(pos), np.concatenate(vals), cfg)


def build_sentences(recordings, cfg: TokenizerConfig, vocab: ChannelVocabulary) -> list[BiosignalSentence]:
    return [build_sentence(r, cfg, vocab) for r in recordings]
