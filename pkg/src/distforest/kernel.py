"""Gaussian kernel, median-heuristic bandwidth and random Fourier features.

The Gaussian kernel ``exp(-|u - v|^2 / (2 sigma^2))`` is the Fourier transform
of N(0, sigma^-2 I), so averaging ``cos(w . (u - v))`` over frequencies drawn
from that normal approximates it without bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

MEDIAN_SUBSAMPLE_CAP = 10_000


@dataclass(frozen=True)
class FourierFeatureSet:
    omegas: np.ndarray  # (B, d)
    bandwidth_sigma: float

    @property
    def B(self) -> int:
        return self.omegas.shape[0]

    @property
    def d(self) -> int:
        return self.omegas.shape[1]


@dataclass(frozen=True)
class FeatureEmbedding:
    """Real and imaginary parts of ``exp(i w_b . y)``; one row per point."""

    cos_part: np.ndarray
    sin_part: np.ndarray


def lower_median(values) -> float:
    """Order statistic at 1-based position ceil(m / 2)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("median of an empty set")
    k = (values.size + 1) // 2 - 1
    return float(np.partition(values, k)[k])


def median_heuristic(y, subsample_cap: int = MEDIAN_SUBSAMPLE_CAP, rng=None) -> float:
    """Median Euclidean distance over all unordered pairs of rows of ``y``.

    Above ``subsample_cap`` rows a uniform subsample (without replacement) of
    that size is used.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] < 2:
        raise ValueError("need at least two rows for the median heuristic")
    if y.shape[0] > subsample_cap:
        rng = np.random.default_rng(rng)
        y = y[np.sort(rng.choice(y.shape[0], subsample_cap, replace=False))]
    sigma = lower_median(pdist(y))
    if not sigma > 0:
        raise ValueError("zero bandwidth: median pairwise distance is 0")
    return sigma


def sample_features(d: int, B: int, sigma: float, rng) -> FourierFeatureSet:
    """Draw ``B`` frequency vectors i.i.d. from N(0, sigma^-2 I_d)."""
    if B < 1 or d < 1:
        raise ValueError("B and d must be positive")
    if not sigma > 0:
        raise ValueError("bandwidth must be positive")
    rng = np.random.default_rng(rng)
    return FourierFeatureSet(rng.standard_normal((B, d)) / sigma, float(sigma))


def sample_feature_bank(d: int, B: int, sigma: float, rng, count: int) -> np.ndarray:
    """``count`` consecutive :func:`sample_features` draws stacked into (count, B, d).

    Consumes the generator exactly like ``count`` sequential calls.
    """
    if not sigma > 0:
        raise ValueError("bandwidth must be positive")
    return rng.standard_normal((count, B, d)) / sigma


def embed(y, f: FourierFeatureSet) -> FeatureEmbedding:
    """Fourier features of one row (shape (d,)) or many rows (shape (n, d))."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != f.d:
        raise ValueError(f"response dimension {y.shape[-1]} does not match features ({f.d})")
    phase = y @ f.omegas.T
    return FeatureEmbedding(np.cos(phase), np.sin(phase))


def gaussian_kernel(u, v, sigma: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("dimension mismatch")
    if not sigma > 0:
        raise ValueError("bandwidth must be positive")
    return float(np.exp(-np.sum((u - v) ** 2) / (2.0 * sigma**2)))


def gaussian_gram(a, b, sigma: float) -> np.ndarray:
    """Kernel matrix between rows of ``a`` and rows of ``b``.

    1-d inputs are read as a column of scalar responses.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * sigma**2))
