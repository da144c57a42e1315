"""Per-token spectral energy vectors."""

import numpy as np

from .errors import BadFftSize

FEATURE_MODES = ("log", "magnitude")


def n_bins(fft_size: int) -> int:
    return fft_size // 2 + 1


def fft_magnitude(values, fft_size: int | None = None) -> np.ndarray:
    """One-sided |DFT| (bins 0..m/2), rectangular window, no padding.

    Works on a single token (shape ``(m,)``) or a stack of tokens along the
    last axis.
    """
    values = np.asarray(values, dtype=np.float64)
    m = values.shape[-1] if values.ndim else 0
    if m < 2:
        raise BadFftSize(f"token needs >= 2 samples, got {m}")
    if fft_size is not None and m != fft_size:
        raise BadFftSize(f"token has {m} samples, fft size is {fft_size}")
    return np.abs(np.fft.rfft(values, axis=-1))


def energy_features(values, fft_size: int | None = None, mode: str = "log") -> np.ndarray:
    """Network-facing energy vector: ``log(1 + |DFT|)`` or the raw magnitude."""
    mag = fft_magnitude(values, fft_size)
    if mode == "log":
        return np.log1p(mag)
    if mode == "magnitude":
        return mag
    raise ValueError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")
