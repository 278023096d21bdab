"""Daubechies-4 discrete wavelet transform and soft-threshold denoising.

The transform uses half-sample symmetric extension at both ends, so the
analysis/synthesis pair is exact for any signal length.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

# Daubechies-4 (8 taps, 4 vanishing moments) synthesis low-pass filter.
DB4_REC_LO = np.array(
    [
        0.23037781330885523,
        0.7148465705525415,
        0.6308807679295904,
        -0.02798376941698385,
        -0.18703481171888114,
        0.030841381835986965,
        0.032883011666982945,
        -0.010597401784997278,
    ]
)
DB4_DEC_LO = DB4_REC_LO[::-1].copy()
DB4_REC_HI = np.array([(-1) ** k * DB4_REC_LO[len(DB4_REC_LO) - 1 - k] for k in range(len(DB4_REC_LO))])
DB4_DEC_HI = DB4_REC_HI[::-1].copy()
FILTER_LEN = len(DB4_REC_LO)

MAD_TO_SIGMA = 0.6745
MIN_SIGNAL_LEN = FILTER_LEN


@dataclass(frozen=True)
class WaveletConfig:
    family: str = "db4"
    decomposition_level: int = 4
    threshold_scale: float = 0.5

    def __post_init__(self):
        if self.family != "db4":
            raise ValueError(f"only db4 is supported, got {self.family!r}")
        if self.decomposition_level < 1:
            raise ValueError("decomposition_level must be >= 1")
        if self.threshold_scale < 0:
            raise ValueError("threshold_scale must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def max_level(n: int, filter_len: int = FILTER_LEN) -> int:
    """Deepest useful decomposition for a length-``n`` signal."""
    if n < filter_len - 1:
        return 0
    return int(math.floor(math.log2(n / (filter_len - 1))))


def dwt(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-level analysis. Returns (approximation, detail)."""
    x = np.asarray(x, dtype=np.float64)
    pad = FILTER_LEN - 1
    xp = np.pad(x, pad, mode="symmetric")
    n_out = (len(x) + FILTER_LEN - 1) // 2
    lo = np.convolve(xp, DB4_DEC_LO)[FILTER_LEN : FILTER_LEN + 2 * n_out : 2]
    hi = np.convolve(xp, DB4_DEC_HI)[FILTER_LEN : FILTER_LEN + 2 * n_out : 2]
    return lo, hi


def _upsample_conv(c: np.ndarray, g: np.ndarray) -> np.ndarray:
    up = np.zeros(2 * len(c))
    up[::2] = c
    full = np.convolve(up, g)
    n_out = 2 * len(c) - FILTER_LEN + 2
    return full[FILTER_LEN - 2 : FILTER_LEN - 2 + n_out]


def idwt(approx: np.ndarray, detail: np.ndarray) -> np.ndarray:
    """Single-level synthesis; output may be one sample longer than the original."""
    if len(approx) != len(detail):
        raise ValueError(f"coefficient lengths differ: {len(approx)} vs {len(detail)}")
    return _upsample_conv(approx, DB4_REC_LO) + _upsample_conv(detail, DB4_REC_HI)


def wavedec(x: np.ndarray, level: int) -> list[np.ndarray]:
    """Multi-level decomposition, ``[a_L, d_L, ..., d_1]`` (d_1 finest)."""
    coeffs = []
    a = np.asarray(x, dtype=np.float64)
    for _ in range(level):
        a, d = dwt(a)
        coeffs.append(d)
    coeffs.append(a)
    return coeffs[::-1]


def waverec(coeffs: list[np.ndarray], length: int | None = None) -> np.ndarray:
    a = coeffs[0]
    for d in coeffs[1:]:
        if len(a) == len(d) + 1:
            a = a[:-1]
        a = idwt(a, d)
    return a if length is None else a[:length]


def estimate_noise_sigma(detail_coeffs) -> float:
    """Robust noise level from finest-scale detail coefficients (MAD rule)."""
    d = np.asarray(detail_coeffs, dtype=np.float64)
    if d.size == 0:
        raise ValueError("detail coefficients are empty")
    return float(np.median(np.abs(d)) / MAD_TO_SIGMA)


def universal_threshold(sigma: float, n: int, scale: float = 0.5) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(sigma * math.sqrt(2.0 * math.log(n)) * scale)


def soft_threshold(x, tau: float):
    if tau < 0:
        raise ValueError("tau must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    return float(out) if out.ndim == 0 else out


def effective_level(n: int, requested: int) -> int:
    return max(1, min(requested, max_level(n)))


def wavelet_denoise(signal, cfg: WaveletConfig = WaveletConfig()) -> np.ndarray:
    """Soft-threshold every detail band; the approximation band is kept as is.

    Signals shorter than the filter support are returned unchanged.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = len(x)
    if n < MIN_SIGNAL_LEN:
        return x.copy()
    level = effective_level(n, cfg.decomposition_level)
    coeffs = wavedec(x, level)
    sigma = estimate_noise_sigma(coeffs[-1])
    tau = universal_threshold(sigma, n, cfg.threshold_scale)
    coeffs = [coeffs[0]] + [soft_threshold(d, tau) for d in coeffs[1:]]
    return waverec(coeffs, n)
