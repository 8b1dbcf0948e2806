"""Split criteria evaluated over every cutoff of a feature in one sorted pass.

All three criteria share the form

    sum over columns c of  n_L n_R / n_P^2 * (mean_L[c] - mean_R[c])^2

applied to a per-sample feature matrix: the raw response for CART, all
response columns for the aggregated marginal CART, and the real/imaginary
parts of the Fourier features (divided by B) for MMD.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba as nb
import numpy as np

from .kernel import FeatureEmbedding, gaussian_gram


@nb.njit(cache=True, nogil=True)
def midpoint(lo, hi):
    m = 0.5 * lo + 0.5 * hi
    if m >= hi or m < lo:
        return lo
    return m


@nb.njit(cache=True, nogil=True)
def scan_sorted(F, vals, min_frac, min_leaf):
    """Score every boundary between distinct values of sorted ``vals``.

    Returns (n_left, scores, admissible, relaxed). Sums are compensated and
    taken relative to the first row, so constant columns score exactly 0.
    """
    n, q = F.shape
    nb_ = 0
    for t in range(n - 1):
        if vals[t] < vals[t + 1]:
            nb_ += 1
    n_left = np.empty(nb_, np.int64)
    scores = np.empty(nb_, np.float64)
    admissible = np.zeros(nb_, np.bool_)
    if nb_ == 0:
        return n_left, scores, admissible, False

    total = np.zeros(q)
    tcomp = np.zeros(q)
    for i in range(n):
        for c in range(q):
            yk = (F[i, c] - F[0, c]) - tcomp[c]
            tk = total[c] + yk
            tcomp[c] = (tk - total[c]) - yk
            total[c] = tk

    left = np.zeros(q)
    lcomp = np.zeros(q)
    k = 0
    inv_n2 = 1.0 / (float(n) * float(n))
    for t in range(n - 1):
        for c in range(q):
            yk = (F[t, c] - F[0, c]) - lcomp[c]
            tk = left[c] + yk
            lcomp[c] = (tk - left[c]) - yk
            left[c] = tk
        if vals[t] < vals[t + 1]:
            nl = t + 1
            nr = n - nl
            s = 0.0
            for c in range(q):
                diff = left[c] / nl - (total[c] - left[c]) / nr
                s += diff * diff
            scores[k] = float(nl) * float(nr) * inv_n2 * s
            n_left[k] = nl
            k += 1

    bound = min_frac * n
    any_frac = False
    for k in range(nb_):
        nl = n_left[k]
        nr = n - nl
        if nl >= min_leaf and nr >= min_leaf and nl >= bound and nr >= bound:
            admissible[k] = True
            any_frac = True
    relaxed = False
    if not any_frac:
        # too few distinct values to honour the fraction: keep only the size floor
        relaxed = True
        for k in range(nb_):
            nl = n_left[k]
            admissible[k] = nl >= min_leaf and n - nl >= min_leaf
    return n_left, scores, admissible, relaxed


@dataclass(frozen=True)
class SplitScan:
    """Scores of all cutoffs of one feature within one node.

    ``sorted_order`` maps sorted position to node-local sample position;
    entry k of the per-cutoff arrays describes the boundary leaving
    ``n_left[k]`` sorted samples on the left.
    """

    feature_index: int
    sorted_order: np.ndarray
    cutoff_values: np.ndarray
    n_left: np.ndarray
    n_right: np.ndarray
    criterion_values: np.ndarray
    admissible: np.ndarray
    relaxed: bool = False

    @property
    def n_parent(self) -> int:
        return self.sorted_order.size

    def is_empty(self) -> bool:
        return not self.admissible.any()


@dataclass(frozen=True)
class SplitDecision:
    feature_index: int
    cutoff_value: float
    score: float
    left_ids: np.ndarray
    right_ids: np.ndarray


def _scan(F, feature_vals, min_frac, min_leaf, feature_index, divisor=1.0) -> SplitScan:
    feature_vals = np.asarray(feature_vals, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != feature_vals.shape[0]:
        raise ValueError("responses and feature values differ in length")
    if F.shape[0] < 2:
        raise ValueError("node needs at least two samples")
    if not np.isfinite(feature_vals).all():
        raise ValueError("non-finite feature values")
    order = np.argsort(feature_vals, kind="mergesort")
    vs = feature_vals[order]
    n_left, scores, adm, relaxed = scan_sorted(np.ascontiguousarray(F[order]), vs,
                                               float(min_frac), int(min_leaf))
    cutoffs = np.array([midpoint(vs[k - 1], vs[k]) for k in n_left], dtype=np.float64)
    return SplitScan(int(feature_index), order, cutoffs, n_left, order.size - n_left,
                     scores / divisor, adm, bool(relaxed))


def mmd_scan(node_y: FeatureEmbedding, feature_vals, min_frac: float = 0.1, B: int | None = None,
             feature_index: int = 0, min_leaf: int = 1) -> SplitScan:
    """Random-feature MMD criterion for every cutoff.

    ``node_y`` holds the (n, B) cosine and sine parts of the Fourier features
    of the node's responses.
    """
    cos_part = np.asarray(node_y.cos_part, dtype=np.float64)
    sin_part = np.asarray(node_y.sin_part, dtype=np.float64)
    if cos_part.ndim == 1:
        cos_part, sin_part = cos_part[:, None], sin_part[:, None]
    B = cos_part.shape[1] if B is None else B
    F = np.hstack([cos_part, sin_part])
    return _scan(F, feature_vals, min_frac, min_leaf, feature_index, divisor=float(B))


def cart_scan(node_y, feature_vals, min_frac: float = 0.1, feature_index: int = 0,
              min_leaf: int = 1) -> SplitScan:
    """CART criterion n_L n_R / n_P^2 (ybar_L - ybar_R)^2 for univariate responses."""
    y = np.asarray(node_y, dtype=np.float64)
    if y.ndim != 1:
        if y.ndim == 2 and y.shape[1] == 1:
            y = y[:, 0]
        else:
            raise ValueError("cart_scan needs univariate responses")
    return _scan(y, feature_vals, min_frac, min_leaf, feature_index)


def cart_multi_scan(node_y, feature_vals, min_frac: float = 0.1, feature_index: int = 0,
                    min_leaf: int = 1) -> SplitScan:
    """Sum of marginal CART criteria over standardized response columns."""
    y = np.asarray(node_y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    return _scan(y, feature_vals, min_frac, min_leaf, feature_index)


def best_split(scan_set: Sequence[SplitScan]) -> SplitDecision | None:
    """Highest strictly positive admissible score over all scans.

    Ties go to the lower feature index, then the lower cutoff.
    """
    best = None
    for scan in sorted(scan_set, key=lambda s: s.feature_index):
        for k in np.flatnonzero(scan.admissible):
            score = scan.criterion_values[k]
            if not score > 0:
                continue
            key = (-score, scan.feature_index, scan.cutoff_values[k])
            if best is None or key < best[0]:
                best = (key, scan, k)
    if best is None:
        return None
    _, scan, k = best
    nl = scan.n_left[k]
    return SplitDecision(scan.feature_index, float(scan.cutoff_values[k]),
                         float(scan.criterion_values[k]),
                         np.sort(scan.sorted_order[:nl]), np.sort(scan.sorted_order[nl:]))


def exact_mmd(u_set, v_set, sigma: float, u_weights=None, v_weights=None) -> float:
    """Biased (V-statistic) MMD^2 between two samples with the Gaussian kernel.

    Optional weights turn each sample into a weighted discrete measure; by
    default every point gets equal mass.
    """
    u = np.asarray(u_set, dtype=np.float64)
    v = np.asarray(v_set, dtype=np.float64)
    u = u[:, None] if u.ndim == 1 else u
    v = v[:, None] if v.ndim == 1 else v
    if u.shape[0] == 0 or v.shape[0] == 0:
        raise ValueError("both samples must be nonempty")
    if u.shape[1] != v.shape[1]:
        raise ValueError("dimension mismatch")
    a = np.full(u.shape[0], 1.0 / u.shape[0]) if u_weights is None else np.asarray(u_weights, float)
    b = np.full(v.shape[0], 1.0 / v.shape[0]) if v_weights is None else np.asarray(v_weights, float)
    kuu = a @ gaussian_gram(u, u, sigma) @ a
    kvv = b @ gaussian_gram(v, v, sigma) @ b
    kuv = a @ gaussian_gram(u, v, sigma) @ b
    return float(kuu + kvv - 2.0 * kuv)
