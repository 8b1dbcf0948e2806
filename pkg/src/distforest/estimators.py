"""Targets computed from a weight vector and the training responses.

Every estimator here treats ``sum_i w_i delta_{y_i}`` as the estimated
conditional distribution; nothing refits a model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import pdist

from .forest import Forest, WeightVector
from .kernel import gaussian_gram, lower_median

# cumulative weights are compared with this slack so that e.g. three weights
# of 1/3 reach level 1 despite rounding
CUM_TOL = 1e-12


class ConditionalDistribution:
    """The discrete measure ``sum_i w_i delta_{y_i}`` over training rows."""

    def __init__(self, weights: WeightVector, y_view):
        y_view = np.asarray(y_view, dtype=np.float64)
        if y_view.ndim == 1:
            y_view = y_view[:, None]
        if weights.n_total != y_view.shape[0]:
            raise ValueError("weight vector and responses differ in length")
        self.weights = weights
        self.y_view = y_view
        self.index = np.asarray(weights.indices, dtype=np.int64)
        self.w = np.asarray(weights.values, dtype=np.float64)
        self.y = y_view[self.index]

    @classmethod
    def from_dense(cls, w, y_view) -> "ConditionalDistribution":
        return cls(WeightVector.from_dense(w), y_view)

    @property
    def d(self) -> int:
        return self.y.shape[1]

    def cdf(self, t) -> float:
        return cdf(self, t)

    def quantile(self, level: float, coord: int = 0) -> float:
        return quantile(self, level, coord)

    def expect(self, f) -> float:
        return expect(self, f)

    def mean(self) -> np.ndarray:
        return self.w @ self.y


def cdf(cd: ConditionalDistribution, t) -> float:
    """Weighted mass of rows with ``y <= t`` in every coordinate."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if t.shape != (cd.d,):
        raise ValueError(f"threshold has length {t.size}, responses have {cd.d} coordinates")
    below = np.all(cd.y <= t, axis=1)
    if below.all():
        return 1.0
    return float(min(cd.w[below].sum(), 1.0))


def _marginal(cd: ConditionalDistribution, coord: int):
    if not 0 <= coord < cd.d:
        raise ValueError(f"coordinate {coord} out of range for d={cd.d}")
    vals, inv = np.unique(cd.y[:, coord], return_inverse=True)
    mass = np.bincount(inv.ravel(), weights=cd.w, minlength=vals.size)
    return vals, np.cumsum(mass)


def quantile(cd: ConditionalDistribution, level: float, coord: int = 0) -> float:
    """Smallest support value whose weighted marginal CDF reaches ``level``."""
    if not 0 < level < 1:
        raise ValueError("quantile level must lie in (0, 1)")
    vals, cum = _marginal(cd, coord)
    k = int(np.searchsorted(cum, level - CUM_TOL, side="left"))
    return float(vals[min(k, vals.size - 1)])


def expect(cd: ConditionalDistribution, f: Callable) -> float:
    """``sum_i w_i f(y_i)``; a non-finite f value raises with its row index."""
    vals = np.empty(cd.w.size)
    for k, row in enumerate(cd.y):
        try:
            v = float(f(row))
        except (ArithmeticError, ValueError) as exc:
            raise ValueError(f"f failed at training row {int(cd.index[k])}: {exc}") from exc
        if not np.isfinite(v):
            raise ValueError(f"f is not finite at training row {int(cd.index[k])}")
        vals[k] = v
    return float(cd.w @ vals)


@dataclass(frozen=True)
class CovCorr:
    covariance: float
    correlation: float  # nan when a marginal variance is zero
    defined: bool


def cov_corr(cd: ConditionalDistribution, i: int, j: int) -> CovCorr:
    """Weighted covariance and correlation of coordinates ``i`` and ``j``."""
    for c in (i, j):
        if not 0 <= c < cd.d:
            raise ValueError(f"coordinate {c} out of range for d={cd.d}")
    a = cd.y[:, i] - cd.w @ cd.y[:, i]
    b = cd.y[:, j] - cd.w @ cd.y[:, j]
    # a constant coordinate on the support has variance exactly zero, not rounding noise
    on = cd.w > 0
    if np.ptp(cd.y[on, i]) == 0 or np.ptp(cd.y[on, j]) == 0:
        return CovCorr(0.0, float("nan"), False)
    cov = float(cd.w @ (a * b))
    va, vb = float(cd.w @ (a * a)), float(cd.w @ (b * b))
    if va <= 0 or vb <= 0:
        return CovCorr(cov, float("nan"), False)
    return CovCorr(cov, float(np.clip(cov / np.sqrt(va * vb), -1.0, 1.0)), True)


def correlation_matrix(cd: ConditionalDistribution) -> np.ndarray:
    """Entrywise :func:`cov_corr` correlations; undefined entries are nan."""
    out = np.eye(cd.d)
    for i in range(cd.d):
        for j in range(i + 1, cd.d):
            out[i, j] = out[j, i] = cov_corr(cd, i, j).correlation
    return out


@dataclass(frozen=True)
class CopulaSample:
    u_points: np.ndarray  # (k, d) in [0, 1]
    weights: np.ndarray  # (k,), sums to one


def copula_sample(cd: ConditionalDistribution) -> CopulaSample:
    """Map every support row through the weighted marginal CDFs."""
    if cd.d < 2:
        raise ValueError("a copula needs at least two response coordinates")
    u = np.empty_like(cd.y)
    for c in range(cd.d):
        vals, cum = _marginal(cd, c)
        u[:, c] = np.minimum(cum[np.searchsorted(vals, cd.y[:, c])], 1.0)
    return CopulaSample(u, cd.w.copy())


def _block_bandwidth(y) -> float:
    if y.shape[0] < 2:
        return 1.0
    m = lower_median(pdist(y))
    # a constant block gives an all-ones kernel whatever the bandwidth
    return m if m > 0 else 1.0


def hsic(cd: ConditionalDistribution, coords_a: Sequence[int], coords_b: Sequence[int],
         sigma_a: float | None = None, sigma_b: float | None = None) -> float:
    """Weighted biased HSIC between two blocks of response coordinates.

    Bandwidths default to the median heuristic over the support rows of
    each block.
    """
    coords_a, coords_b = list(coords_a), list(coords_b)
    if not coords_a or not coords_b or set(coords_a) & set(coords_b):
        raise ValueError("coordinate sets must be nonempty and disjoint")
    if max(coords_a + coords_b) >= cd.d or min(coords_a + coords_b) < 0:
        raise ValueError("coordinate out of range")
    ya, yb = cd.y[:, coords_a], cd.y[:, coords_b]
    sigma_a = _block_bandwidth(ya) if sigma_a is None else sigma_a
    sigma_b = _block_bandwidth(yb) if sigma_b is None else sigma_b
    if not (sigma_a > 0 and sigma_b > 0):
        raise ValueError("bandwidths must be positive")
    w = cd.w
    K = gaussian_gram(ya, ya, sigma_a)
    L = gaussian_gram(yb, yb, sigma_b)
    Kw, Lw = K @ w, L @ w
    val = w @ ((K * L) @ w) + (w @ Kw) * (w @ Lw) - 2.0 * w @ (Kw * Lw)
    return float(val)


def resample(cd: ConditionalDistribution, m: int, rng=None) -> np.ndarray:
    """``m`` i.i.d. response rows drawn with probabilities ``w``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    rng = np.random.default_rng(rng)
    pick = rng.choice(cd.w.size, size=m, p=cd.w / cd.w.sum())
    return cd.y[pick].copy()


@dataclass(frozen=True)
class MLEResult:
    theta: np.ndarray
    objective: float  # weighted log-likelihood at theta
    converged: bool
    n_sweeps: int


def weighted_mle(cd: ConditionalDistribution, loglik: Callable, theta_init, bounds=None,
                 max_sweeps: int = 100, tol: float = 1e-10) -> MLEResult:
    """Maximize ``sum_i w_i loglik(theta, y_i)`` by bounded coordinate search.

    Each sweep runs a bounded golden-section/Brent line search on every
    coordinate in turn. ``bounds`` is a sequence of (lo, hi) pairs; by
    default each coordinate may move by ``10 * (1 + |theta_init|)``.
    """
    theta = np.atleast_1d(np.asarray(theta_init, dtype=np.float64)).copy()
    if bounds is None:
        span = 10.0 * (1.0 + np.abs(theta))
        bounds = list(zip(theta - span, theta + span))
    if len(bounds) != theta.size:
        raise ValueError("one (lo, hi) pair per parameter is required")

    def objective(th):
        vals = np.array([loglik(th, row) for row in cd.y], dtype=np.float64)
        val = float(cd.w @ vals)
        if not np.isfinite(val):
            raise ValueError(f"non-finite weighted log-likelihood at theta={th.tolist()}")
        return val

    current = objective(theta)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        before = current
        for k, (lo, hi) in enumerate(bounds):
            def neg(v, k=k):
                th = theta.copy()
                th[k] = v
                return -objective(th)
            res = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12 * (1 + abs(hi - lo))})
            if -res.fun >= current:
                theta[k] = res.x
                current = -res.fun
        if abs(current - before) <= tol * (1.0 + abs(current)):
            converged = True
            break
    return MLEResult(theta, current, converged, sweeps)


def silverman_bandwidth(v) -> float:
    v = np.asarray(v, dtype=np.float64).ravel()
    sd = v.std(ddof=1)
    iqr = np.subtract(*np.percentile(v, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if not spread > 0:
        raise ValueError("cannot choose a bandwidth for a constant treatment")
    return float(0.9 * spread * v.size ** (-0.2))


@dataclass(frozen=True)
class DoAverage:
    grid: np.ndarray
    estimate: np.ndarray  # nan where unavailable
    available: np.ndarray  # grid points with at least one usable x
    n_used: np.ndarray  # usable x rows per grid point
    bandwidth: float


def do_average(f: Forest, w_grid, x_sample, smoother_bw: float | None = None,
               treatment: int = 0, outcome: int = 1, chunk: int = 256) -> DoAverage:
    """Adjustment-formula estimate of E[Y | do(W = w)] on ``w_grid``.

    For every x in ``x_sample`` the forest weights are combined with a
    Gaussian kernel in W to give a Nadaraya-Watson estimate of
    E[Y | W = w, X = x]; these are averaged over x. Cells whose kernel
    denominator is zero are dropped from the average, and grid points with
    no usable cell are reported as unavailable.
    """
    x_sample = np.atleast_2d(np.asarray(x_sample, dtype=np.float64))
    if x_sample.shape[0] == 0:
        raise ValueError("x_sample is empty")
    grid = np.atleast_1d(np.asarray(w_grid, dtype=np.float64))
    W, Y = f.y_train[:, treatment], f.y_train[:, outcome]
    bw = silverman_bandwidth(W) if smoother_bw is None else float(smoother_bw)
    if not bw > 0:
        raise ValueError("smoother bandwidth must be positive")
    G = np.exp(-0.5 * ((W[:, None] - grid[None, :]) / bw) ** 2)  # (n, g)
    GY = G * Y[:, None]
    total = np.zeros(grid.size)
    used = np.zeros(grid.size, np.int64)
    for s in range(0, x_sample.shape[0], chunk):
        Wm = f.weight_matrix(x_sample[s:s + chunk])
        den = Wm @ G
        num = Wm @ GY
        ok = den > 0
        total += np.where(ok, num / np.where(ok, den, 1.0), 0.0).sum(axis=0)
        used += ok.sum(axis=0)
    available = used > 0
    est = np.full(grid.size, np.nan)
    est[available] = total[available] / used[available]
    return DoAverage(grid, est, available, used, bw)


def weighted_quantiles(W, y, levels) -> np.ndarray:
    """Generalized-inverse quantiles for every row of a weight matrix.

    ``W`` is (q, n), ``y`` a length-n vector; returns (q, len(levels)).
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    order = np.argsort(y, kind="stable")
    ys = y[order]
    cum = np.cumsum(W[:, order], axis=1)
    # the cumulative weight of a tie block is read at its last member
    last = np.append(ys[1:] != ys[:-1], True)
    cum = cum[:, last]
    vals = ys[last]
    out = np.empty((W.shape[0], len(levels)))
    for a, level in enumerate(levels):
        if not 0 < level < 1:
            raise ValueError("quantile levels must lie in (0, 1)")
        k = (cum < level - CUM_TOL).sum(axis=1)
        out[:, a] = vals[np.minimum(k, vals.size - 1)]
    return out
