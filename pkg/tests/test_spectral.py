import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biosent.errors import BadFftSize
from biosent.spectral import energy_features, fft_magnitude, n_bins

from oracles import dft_magnitude


def test_constant_token():
    out = fft_magnitude(np.full(16, 3.0))
    assert out[0] == pytest.approx(48.0, abs=1e-9)
    np.testing.assert_allclose(out[1:], 0, atol=1e-9)


@pytest.mark.parametrize("m,k0", [(16, 3), (200, 10), (9, 2)])
def test_pure_cosine(m, k0):
    n = np.arange(m)
    out = fft_magnitude(np.cos(2 * np.pi * k0 * n / m))
    assert out[k0] == pytest.approx(m / 2, abs=1e-9)
    rest = np.delete(out, k0)
    np.testing.assert_allclose(rest, 0, atol=1e-9)


def test_random_length_8_matches_direct_dft(rng):
    x = rng.normal(size=8)
    np.testing.assert_allclose(fft_magnitude(x), dft_magnitude(x), rtol=0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 64), st.integers(0, 2**32 - 1))
def test_matches_direct_dft_any_length(m, seed):
    x = np.random.default_rng(seed).normal(size=m)
    out = fft_magnitude(x)
    assert out.shape == (m // 2 + 1,) == (n_bins(m),)
    np.testing.assert_allclose(out, dft_magnitude(x), rtol=0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 128), st.integers(0, 2**32 - 1))
def test_parseval(m, seed):
    x = np.random.default_rng(seed).normal(size=m)
    one = fft_magnitude(x)
    # rebuild the two-sided power from the one-sided bins
    full = one[0] ** 2 + 2 * np.sum(one[1:(m + 1) // 2] ** 2)
    if m % 2 == 0:
        full += one[m // 2] ** 2
    assert full == pytest.approx(m * np.sum(x * x), rel=1e-6)


@pytest.mark.parametrize("shift", [1, 5, 13])
def test_circular_shift_invariance(shift):
    m = 32
    x = np.sin(2 * np.pi * 4 * np.arange(m) / m + 0.3)
    np.testing.assert_allclose(fft_magnitude(np.roll(x, shift)), fft_magnitude(x), atol=1e-9)


def test_batched_rows():
    x = np.random.default_rng(0).normal(size=(5, 20))
    out = fft_magnitude(x)
    assert out.shape == (5, 11)
    np.testing.assert_allclose(out[3], dft_magnitude(x[3]), atol=1e-9)


def test_wrong_length():
    with pytest.raises(BadFftSize):
        fft_magnitude(np.zeros(10), fft_size=200)
    with pytest.raises(BadFftSize):
        fft_magnitude(np.zeros(1))


def test_energy_zero_token():
    np.testing.assert_array_equal(energy_features(np.zeros(12)), 0.0)


def test_energy_constant_one_m4():
    out = energy_features(np.ones(4))
    assert out[0] == pytest.approx(np.log(5))
    np.testing.assert_allclose(out[1:], 0, atol=1e-12)


def test_energy_monotone_in_magnitude(rng):
    x = rng.normal(size=40)
    mag = fft_magnitude(x)
    feat = energy_features(x)
    order = np.argsort(mag)
    assert np.all(np.diff(feat[order]) >= 0)
    np.testing.assert_allclose(energy_features(x, mode="magnitude"), mag)
    with pytest.raises(ValueError):
        energy_features(x, mode="power")
