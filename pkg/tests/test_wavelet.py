from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rulkit.signal_prep.wavelet import (
    DB4_REC_LO,
    WaveletConfig,
    dwt,
    effective_level,
    estimate_noise_sigma,
    idwt,
    soft_threshold,
    universal_threshold,
    wavedec,
    waverec,
    wavelet_denoise,
)


def daubechies_by_spectral_factorization(p=4):
    """Independent derivation of the 2p-tap Daubechies low-pass filter."""
    # P(y) = sum_k C(p-1+k, k) y^k, y = (2 - z - 1/z) / 4
    coeffs = [comb(p - 1 + k, k) for k in range(p)][::-1]
    zs = []
    for y in np.roots(coeffs):
        # z^2 - (2 - 4y) z + 1 = 0; keep the root inside the unit circle
        r = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
        zs.append(r[np.argmin(np.abs(r))])
    h = np.poly(np.concatenate([-np.ones(p), zs])).real
    return h / h.sum() * np.sqrt(2.0)


def test_db4_matches_spectral_factorization():
    oracle = daubechies_by_spectral_factorization(4)
    ours = np.asarray(DB4_REC_LO)
    assert np.allclose(ours, oracle, atol=1e-10) or np.allclose(ours, oracle[::-1], atol=1e-10)


def test_db4_orthonormal():
    h = np.asarray(DB4_REC_LO)
    assert h.sum() == pytest.approx(np.sqrt(2.0), abs=1e-12)
    for shift in range(0, 8, 2):
        dot = np.dot(h[shift:], h[: 8 - shift])
        assert dot == pytest.approx(1.0 if shift == 0 else 0.0, abs=1e-12)


def test_noise_sigma_examples():
    assert estimate_noise_sigma([0.6745, -0.6745, 0.6745]) == pytest.approx(1.0)
    assert estimate_noise_sigma(np.zeros(7)) == 0.0
    assert estimate_noise_sigma([1.349]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        estimate_noise_sigma([])


def test_universal_threshold_examples():
    assert universal_threshold(0.0, 500) == 0.0
    assert universal_threshold(1.0, 1024) == pytest.approx(1.86166, abs=1e-4)
    assert universal_threshold(3.0, 1) == 0.0


def test_soft_threshold_examples():
    assert soft_threshold(0.0, 0.5) == 0.0
    assert soft_threshold(2.0, 0.5) == pytest.approx(1.5)
    assert soft_threshold(-0.3, 0.5) == 0.0
    x = np.linspace(-3, 3, 13)
    np.testing.assert_array_equal(soft_threshold(x, 0.0), x)


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e3, 1e3)), st.floats(0, 10))
def test_soft_threshold_shrinks(x, tau):
    y = soft_threshold(x, tau)
    assert np.all(np.abs(y) <= np.abs(x) + 1e-12)
    assert np.all(np.sign(y) * np.sign(x) >= 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(8, 700), st.integers(0, 2**31))
def test_perfect_reconstruction(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    level = effective_level(n, 4)
    rec = waverec(wavedec(x, level), n)
    assert rec.shape == x.shape
    assert np.max(np.abs(rec - x)) < 1e-9


def test_single_level_pair():
    x = np.random.default_rng(0).normal(size=37)
    a, d = dwt(x)
    assert np.max(np.abs(idwt(a, d)[: len(x)] - x)) < 1e-10


def test_effective_level():
    assert effective_level(8, 4) == 1
    assert effective_level(200, 4) == 4
    assert effective_level(30, 4) == 2


def test_zero_threshold_identity():
    rng = np.random.default_rng(1)
    cfg = WaveletConfig(threshold_scale=0.0)
    for _ in range(20):
        x = rng.normal(size=int(rng.integers(64, 513)))
        assert np.max(np.abs(wavelet_denoise(x, cfg) - x)) < 1e-6


def test_constant_unchanged():
    for n in (8, 31, 128, 301):
        x = np.full(n, 641.82)
        assert np.max(np.abs(wavelet_denoise(x) - x)) < 1e-8


def test_short_signal_passthrough():
    x = np.array([1.0, 5.0, -2.0, 3.0, 0.0, 1.0, 2.0])
    np.testing.assert_array_equal(wavelet_denoise(x), x)


def snr_db(clean, est):
    return 10 * np.log10(np.sum(clean**2) / np.sum((est - clean) ** 2))


def test_noisy_sine_snr_gain():
    t = np.arange(256)
    clean = np.sin(2 * np.pi * t / 64)
    rms = np.sqrt(np.mean(clean**2))
    gains = []
    for seed in range(5):
        noisy = clean + np.random.default_rng(seed).normal(0, 0.2 * rms, 256)
        gains.append(snr_db(clean, wavelet_denoise(noisy)) - snr_db(clean, noisy))
    assert min(gains) >= 5.0


def test_output_length_matches():
    for n in (8, 9, 63, 200, 361):
        assert wavelet_denoise(np.random.default_rng(n).normal(size=n)).shape == (n,)


def test_second_pass_finest_detail_energy_not_larger():
    rng = np.random.default_rng(4)
    x = np.sin(np.arange(300) / 20) + rng.normal(0, 0.3, 300)
    once = wavelet_denoise(x)
    twice = wavelet_denoise(once)
    e1 = np.sum(wavedec(once, 4)[-1] ** 2)
    e2 = np.sum(wavedec(twice, 4)[-1] ** 2)
    assert e2 <= e1 + 1e-12
