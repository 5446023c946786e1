# src/wavelets.py
import functools
import logging

import numpy as np
import pywt

from data_models import WaveletSpec
from exceptions import LengthNotDivisible

logger = logging.getLogger(__name__)


@functools.lru_cache(maxsize=None)
def daubechies_filter(n_moments: int) -> tuple[float, ...]:
    """
    Scaling (low-pass) filter of the Daubechies wavelet with n_moments vanishing
    moments, normalized to sum sqrt(2). db1 is Haar.
    """
    if not 1 <= n_moments <= 10:
        raise ValueError(f"Daubechies filters are provided for N in 1..10, got {n_moments}")
    # rec_lo lists the taps in the h[0], h[1], ... order used by analysis_step.
    return tuple(float(t) for t in pywt.Wavelet(f"db{n_moments}").rec_lo)


def wavelet_filters(spec: WaveletSpec) -> tuple[np.ndarray, np.ndarray]:
    """(h, g): scaling and wavelet filters, g[k] = (-1)^k h[K-1-k]."""
    h = np.array(daubechies_filter(1 if spec.family == "haar" else spec.vanishing_moments))
    g = h[::-1] * np.where(np.arange(len(h)) % 2 == 0, 1.0, -1.0)
    return h, g


def check_length(spec: WaveletSpec, n: int):
    if n < 1 or n % (2**spec.levels) != 0:
        raise LengthNotDivisible(f"Signal length {n} is not divisible by 2^{spec.levels}")


def wavelet_level_boundaries(n: int, levels: int) -> tuple[int, ...]:
    """Boundaries of [scaling | coarsest detail | ... | finest detail]."""
    if n % (2**levels) != 0:
        raise LengthNotDivisible(f"Signal length {n} is not divisible by 2^{levels}")
    coarse = n // 2**levels
    return (0, coarse) + tuple(coarse * 2**k for k in range(1, levels + 1))


def _filter_index(length: int, taps: int) -> np.ndarray:
    return (2 * np.arange(length // 2)[:, None] + np.arange(taps)[None, :]) % length


def analysis_step(c: np.ndarray, h: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One periodized analysis step: c of length L -> (approximation, detail), each L/2."""
    idx = _filter_index(len(c), len(h))
    blocks = c[idx]
    return blocks @ h, blocks @ g


def synthesis_step(a: np.ndarray, d: np.ndarray, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Adjoint (and inverse) of analysis_step."""
    length = 2 * len(a)
    idx = _filter_index(length, len(h))
    out = np.zeros(length, dtype=np.result_type(a, d, h))
    np.add.at(out, idx, a[:, None] * h[None, :] + d[:, None] * g[None, :])
    return out


def dwt_forward(x: np.ndarray, spec: WaveletSpec) -> np.ndarray:
    """Multilevel periodized DWT; output layout [scaling | detail coarse -> fine]."""
    check_length(spec, len(x))
    h, g = wavelet_filters(spec)
    approx = np.asarray(x)
    details = []
    for _ in range(spec.levels):
        approx, detail = analysis_step(approx, h, g)
        details.append(detail)
    return np.concatenate([approx] + details[::-1])


def dwt_inverse(w: np.ndarray, spec: WaveletSpec) -> np.ndarray:
    check_length(spec, len(w))
    h, g = wavelet_filters(spec)
    bounds = wavelet_level_boundaries(len(w), spec.levels)
    w = np.asarray(w)
    approx = w[: bounds[1]]
    for k in range(1, spec.levels + 1):
        approx = synthesis_step(approx, w[bounds[k]: bounds[k + 1]], h, g)
    return approx


def tensor_level_order(M: tuple[int, ...]) -> tuple[np.ndarray, tuple[int, ...]]:
    """
    Orders the n x n row-major grid level by level, level(i, j) = max(level(i), level(j)).
    Returns the flat indices in the new order and the 2-D level boundaries.
    """
    n = M[-1]
    levels_1d = np.searchsorted(M, np.arange(n), side="right") - 1
    grid_level = np.maximum(levels_1d[:, None], levels_1d[None, :]).ravel()
    order = np.argsort(grid_level, kind="stable")
    boundaries = (0,) + tuple(int(m) ** 2 for m in M[1:])
    return order, boundaries
