"""Synthetic scenarios, loss metrics and the repeated hold-out benchmark."""

from __future__ import annotations

import csv
import json
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import logsumexp
from scipy.stats import norm, trim_mean

from . import __version__
from .data import Dataset
from .estimators import ConditionalDistribution, weighted_quantiles
from .forest import ForestConfig, fit
from .kernel import lower_median, median_heuristic
from .tree import TreeConfig

SCENARIOS = ("toy-grf", "vignette", "scenario1", "scenario2", "scenario3", "copula", "causal18")
METHODS = ("drf-mmd", "drf-cart", "knn", "kernel-smoother", "rf-residual")
DEFAULT_ALPHAS = (0.1, 0.3, 0.5, 0.7, 0.9)

_DEFAULTS = {
    "toy-grf": dict(n=300, p=30, params={"sigma": 0.2}),
    "vignette": dict(n=1000, p=10, params={}),
    "scenario1": dict(n=2000, p=40, params={}),
    "scenario2": dict(n=2000, p=40, params={}),
    "scenario3": dict(n=2000, p=40, params={}),
    "copula": dict(n=5000, p=30, params={"d": 5}),
    "causal18": dict(n=5000, p=20, params={}),
}


class LeakError(ValueError):
    """Raised when test rows overlap the rows a method was trained on."""


@dataclass(frozen=True)
class Scenario:
    id: str
    n: int | None = None
    p: int | None = None
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in _DEFAULTS:
            raise ValueError(f"unknown scenario {self.id!r}; choose from {', '.join(SCENARIOS)}")
        base = _DEFAULTS[self.id]
        if self.n is None:
            object.__setattr__(self, "n", base["n"])
        if self.p is None:
            object.__setattr__(self, "p", base["p"])
        object.__setattr__(self, "params", {**base["params"], **self.params})

    def with_seed(self, seed: int) -> "Scenario":
        return Scenario(self.id, self.n, self.p, seed, dict(self.params))

    def to_dict(self) -> dict:
        return {"id": self.id, "n": self.n, "p": self.p, "seed": self.seed, "params": self.params}


class GroundTruth:
    """Analytic facts about a scenario's conditional distribution.

    Accessors not defined for a scenario raise ``NotImplementedError``.
    """

    def __init__(self, quantile=None, mean=None, correlation=None, do_curve=None):
        self._quantile, self._mean = quantile, mean
        self._correlation, self._do_curve = correlation, do_curve

    @staticmethod
    def _call(fn, name, *args):
        if fn is None:
            raise NotImplementedError(f"no ground truth for {name} in this scenario")
        return fn(*args)

    def quantile(self, x, alpha: float, coord: int = 0) -> np.ndarray:
        """True conditional alpha-quantile of coordinate ``coord`` at each row of ``x``."""
        return self._call(self._quantile, "quantile", np.atleast_2d(x), alpha, coord)

    def mean(self, x) -> np.ndarray:
        return self._call(self._mean, "mean", np.atleast_2d(x))

    def correlation(self, x, i: int = 0, j: int = 1) -> np.ndarray:
        return self._call(self._correlation, "correlation", np.atleast_2d(x), i, j)

    def do_curve(self, w) -> np.ndarray:
        return self._call(self._do_curve, "do_curve", np.asarray(w, dtype=np.float64))


class Generated(NamedTuple):
    dataset: Dataset
    truth: GroundTruth


def _pos(x):
    return (x[:, 0] > 0).astype(np.float64)


def generate(s: Scenario) -> Generated:
    rng = np.random.default_rng(s.seed)
    n, p = s.n, s.p
    if s.id == "toy-grf":
        sigma = s.params["sigma"]
        x = rng.standard_normal((n, p))
        y = x[:, [0, 0]] + sigma * rng.standard_normal((n, 2))
        truth = GroundTruth(
            quantile=lambda x, a, c: x[:, 0] + sigma * norm.ppf(a),
            mean=lambda x: x[:, [0, 0]].copy(),
            correlation=lambda x, i, j: np.full(x.shape[0], 1.0 if i == j else 0.0))
    elif s.id == "vignette":
        x = rng.uniform(0, 1, (n, p))
        y = np.column_stack([rng.uniform(x[:, 0], x[:, 0] + 1), rng.uniform(0, x[:, 1])])
        truth = GroundTruth(
            quantile=lambda x, a, c: x[:, 0] + a if c == 0 else a * x[:, 1],
            mean=lambda x: np.column_stack([x[:, 0] + 0.5, x[:, 1] / 2]),
            correlation=lambda x, i, j: np.full(x.shape[0], 1.0 if i == j else 0.0))
    elif s.id in ("scenario1", "scenario2", "scenario3"):
        x = rng.uniform(-1, 1, (n, p))
        pos = _pos(x)
        if s.id == "scenario1":
            y = rng.normal(0.8 * pos, 1.0)
            truth = GroundTruth(quantile=lambda x, a, c: 0.8 * _pos(x) + norm.ppf(a),
                                mean=lambda x: (0.8 * _pos(x))[:, None])
        elif s.id == "scenario2":
            y = rng.normal(0.0, 1.0 + pos)
            truth = GroundTruth(quantile=lambda x, a, c: (1.0 + _pos(x)) * norm.ppf(a),
                                mean=lambda x: np.zeros((x.shape[0], 1)))
        else:
            y = np.where(pos > 0, rng.exponential(1.0, n), rng.normal(1.0, 1.0, n))
            truth = GroundTruth(
                quantile=lambda x, a, c: np.where(_pos(x) > 0, -math.log1p(-a), 1.0 + norm.ppf(a)),
                mean=lambda x: np.ones((x.shape[0], 1)))
    elif s.id == "copula":
        d = int(s.params["d"])
        x = rng.uniform(0, 1, (n, p))
        rho = x[:, 0]
        z0 = rng.standard_normal(n)
        y = np.sqrt(rho)[:, None] * z0[:, None] + np.sqrt(1 - rho)[:, None] * rng.standard_normal((n, d))
        truth = GroundTruth(
            quantile=lambda x, a, c: np.full(x.shape[0], norm.ppf(a)),
            mean=lambda x: np.zeros((x.shape[0], d)),
            correlation=lambda x, i, j: np.ones(x.shape[0]) if i == j else x[:, 0].copy())
    else:  # causal18
        x = rng.uniform(0, 5, (n, p))
        w = rng.normal(x[:, 1], 1.0)
        y = rng.normal(x[:, 1] + x[:, 0] * np.sin(w), 1.0)
        y = np.column_stack([w, y])
        # E[sin W | X] = sin(x2) exp(-1/2) for W ~ N(x2, 1)
        truth = GroundTruth(
            mean=lambda x: np.column_stack([x[:, 1], x[:, 1] + x[:, 0] * np.sin(x[:, 1]) * math.exp(-0.5)]),
            do_curve=lambda w: 2.5 + 2.5 * np.sin(w))
        return Generated(Dataset.from_arrays(x, y, y_names=["W", "Y"]), truth)
    return Generated(Dataset.from_arrays(x, y), truth)


# -- metrics -------------------------------------------------------------

def pinball(pred_q, y, alpha: float):
    """alpha (y - q)^+ + (1 - alpha) (q - y)^+, elementwise."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    diff = np.asarray(y, dtype=np.float64) - np.asarray(pred_q, dtype=np.float64)
    out = np.maximum(alpha * diff, (alpha - 1.0) * diff)
    return float(out) if out.ndim == 0 else out


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class LossReport:
    metric: str
    per_point: np.ndarray
    aggregate: float
    config: dict = field(default_factory=dict)
    trim: float = 0.0

    def recompute(self) -> float:
        if self.trim > 0:
            return float(trim_mean(self.per_point, self.trim))
        return float(np.mean(self.per_point))

    def to_dict(self) -> dict:
        return {"metric": self.metric, "per_point": [float(v) for v in self.per_point],
                "aggregate": self.aggregate, "trim": self.trim, "config": self.config,
                "version": _git_describe()}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text


def kde_log_density(samples, y, bandwidth=None) -> float:
    """Log density at ``y`` of a product Gaussian KDE on ``samples`` (m, d).

    By default each coordinate is standardized by the sample sd of the m
    samples and one median-heuristic bandwidth is used on the standardized
    scale; ``bandwidth`` gives per-coordinate bandwidths directly.
    """
    s = np.asarray(samples, dtype=np.float64)
    s = s[:, None] if s.ndim == 1 else s
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if s.shape[0] < 2:
        raise ValueError("need at least two samples per point")
    if bandwidth is None:
        scale = s.std(axis=0, ddof=1)
        if np.any(scale <= 0):
            raise ValueError("zero bandwidth: degenerate samples")
        h = lower_median(pdist(s / scale))
        if not h > 0:
            raise ValueError("zero bandwidth: degenerate samples")
        hj = h * scale
    else:
        hj = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (s.shape[1],))
        if np.any(hj <= 0):
            raise ValueError("bandwidth must be positive")
    z = (y - s) / hj
    logk = -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(hj * math.sqrt(2 * math.pi)))
    return float(logsumexp(logk) - math.log(s.shape[0]))


def nlpd(samples: Sequence, y_test, trim: float = 0.05, bandwidth=None,
         config: dict | None = None) -> LossReport:
    """Negative log predictive density per test point, trimmed-mean aggregate.

    ``trim`` is cut from each tail.
    """
    y_test = np.asarray(y_test, dtype=np.float64)
    y_test = y_test[:, None] if y_test.ndim == 1 else y_test
    if len(samples) != y_test.shape[0]:
        raise ValueError("one sample set per test point is required")
    losses = np.array([-kde_log_density(samples[i], y_test[i], bandwidth) for i in range(len(samples))])
    agg = float(trim_mean(losses, trim)) if trim > 0 else float(losses.mean())
    return LossReport("nlpd", losses, agg, dict(config or {}), trim)


def wasserstein_grid(pred_quantiles, true_quantiles) -> float:
    """Root mean squared difference of two quantile vectors on a common grid."""
    a = np.asarray(pred_quantiles, dtype=np.float64).ravel()
    b = np.asarray(true_quantiles, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"quantile vectors differ in length ({a.size} vs {b.size})")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# -- competing methods ------------------------------------------------------

@dataclass(frozen=True)
class MethodOptions:
    num_trees: int = 500
    num_features: int = 20
    mtry: float | None = None
    min_node_frac: float = 0.10
    rf_trees: int = 200
    n_jobs: int = 1


class _WeightModel:
    """Predictive distributions as weights over training responses."""

    def __init__(self, weight_fn: Callable, y_train):
        self.weight_fn = weight_fn
        self.y_train = y_train

    def weights(self, x):
        return self.weight_fn(x)

    def quantiles(self, x, levels, coord=0):
        return weighted_quantiles(self.weights(x), self.y_train[:, coord], levels)

    def samples(self, x, m, rng):
        W = self.weights(x)
        return [self.y_train[rng.choice(W.shape[1], m, p=row / row.sum())] for row in W]


class _ResidualModel:
    """Conditional mean plus the pooled vectors of out-of-bag training residuals."""

    def __init__(self, models, residuals):
        self.models = models
        self.residuals = residuals

    def mean(self, x):
        return np.column_stack([m.predict(x) for m in self.models])

    def quantiles(self, x, levels, coord=0):
        mu = self.mean(x)[:, coord]
        r = self.residuals[:, coord]
        w = np.full((1, r.size), 1.0 / r.size)
        return mu[:, None] + weighted_quantiles(w, r, levels)

    def samples(self, x, m, rng):
        mu = self.mean(x)
        return [mu[i] + self.residuals[rng.integers(0, self.residuals.shape[0], m)]
                for i in range(mu.shape[0])]


def fit_method(method: str, train: Dataset, opts: MethodOptions, seed: int):
    if method in ("drf-mmd", "drf-cart"):
        cfg = ForestConfig(num_trees=opts.num_trees, num_features=opts.num_features,
                           tree=TreeConfig(mtry=opts.mtry, min_node_frac=opts.min_node_frac),
                           split_rule="mmd" if method == "drf-mmd" else "cart", seed=seed)
        forest = fit(train, cfg, n_jobs=opts.n_jobs)
        return _WeightModel(forest.weight_matrix, train.y)
    if method == "knn":
        from sklearn.neighbors import NearestNeighbors
        k = int(math.ceil(math.sqrt(train.n)))
        nn = NearestNeighbors(n_neighbors=k).fit(train.x)

        def knn_weights(x):
            idx = nn.kneighbors(np.atleast_2d(x), return_distance=False)
            W = np.zeros((idx.shape[0], train.n))
            np.put_along_axis(W, idx, 1.0 / k, axis=1)
            return W
        return _WeightModel(knn_weights, train.y)
    if method == "kernel-smoother":
        from .kernel import gaussian_gram
        sigma = median_heuristic(train.x, rng=seed)

        def kernel_weights(x):
            K = gaussian_gram(np.atleast_2d(x), train.x, sigma)
            return K / K.sum(axis=1, keepdims=True)
        return _WeightModel(kernel_weights, train.y)
    if method == "rf-residual":
        from sklearn.ensemble import RandomForestRegressor
        models, oob = [], []
        for c in range(train.d):
            rf = RandomForestRegressor(n_estimators=opts.rf_trees, oob_score=True,
                                       random_state=seed + c, n_jobs=opts.n_jobs)
            models.append(rf.fit(train.x, train.y[:, c]))
            oob.append(rf.oob_prediction_)
        # out-of-bag residuals: in-sample ones are shrunk by the forest's own fit
        return _ResidualModel(models, train.y - np.column_stack(oob))
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def check_no_leak(train_ids, test_ids) -> None:
    overlap = np.intersect1d(np.asarray(train_ids), np.asarray(test_ids))
    if overlap.size:
        raise LeakError(f"{overlap.size} test rows were used for training (e.g. row {int(overlap[0])})")


@dataclass
class BenchmarkResult:
    scenario: dict
    metric: str
    reports: list = field(default_factory=list)  # (method, level, repeat, LossReport)
    plot_rows: list = field(default_factory=list)  # (x, method, target, estimate, truth)

    def table(self) -> dict:
        """method -> level -> (mean over repeats, sd over repeats)."""
        out: dict = {}
        for method, level, _, rep in self.reports:
            out.setdefault(method, {}).setdefault(level, []).append(rep.aggregate)
        return {m: {lv: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
                    for lv, v in levels.items()} for m, levels in out.items()}

    def to_dict(self) -> dict:
        table = self.table()
        return {"scenario": self.scenario, "metric": self.metric, "version": _git_describe(),
                "table": {m: {str(lv): {"mean": a, "sd": b} for lv, (a, b) in t.items()}
                          for m, t in table.items()},
                "reports": [{"method": m, "level": lv, "repeat": r, **rep.to_dict()}
                            for m, lv, r, rep in self.reports]}

    def write(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=1))
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["x", "method", "target", "estimate", "truth"])
                wr.writerows(self.plot_rows)


def evaluate_split(ds: Dataset, truth: GroundTruth | None, train_ids, test_ids, methods,
                   metric: str, opts: MethodOptions, seed: int, alphas=DEFAULT_ALPHAS,
                   m_samples: int = 500, coord: int = 0):
    """Fit every method on ``train_ids`` and score it on ``test_ids``.

    Returns ``[(method, level, LossReport)]`` plus tidy plot rows.
    """
    check_no_leak(train_ids, test_ids)
    train, test = ds.subset(train_ids), ds.subset(test_ids)
    out, rows = [], []
    for k, method in enumerate(methods):
        model = fit_method(method, train, opts, seed + 1000 * k)
        cfg = {"method": method, "seed": seed}
        if metric == "pinball":
            Q = model.quantiles(test.x, alphas, coord)
            for a, alpha in enumerate(alphas):
                losses = pinball(Q[:, a], test.y[:, coord], alpha)
                out.append((method, alpha, LossReport("pinball", losses, float(losses.mean()),
                                                      {**cfg, "alpha": alpha})))
                tq = None
                if truth is not None:
                    try:
                        tq = truth.quantile(test.x, alpha, coord)
                    except NotImplementedError:
                        pass
                for i in range(min(test.n, 200)):
                    rows.append((float(test.x[i, 0]), method, f"quantile:{alpha}",
                                 float(Q[i, a]), "" if tq is None else float(tq[i])))
        elif metric == "nlpd":
            rng = np.random.default_rng([seed, k])
            samples = model.samples(test.x, m_samples, rng)
            out.append((method, None, nlpd(samples, test.y, config=cfg)))
        else:
            raise ValueError(f"unknown metric {metric!r}")
    return out, rows


def run_benchmark(s: Scenario, methods: Sequence[str] = METHODS, split: float = 0.7,
                  metric: str = "pinball", repeats: int = 10, opts: MethodOptions | None = None,
                  alphas=DEFAULT_ALPHAS, m_samples: int = 500) -> BenchmarkResult:
    """Repeated random train/test evaluation of several methods.

    Each repeat draws a fresh dataset and a fresh split from seeds derived
    from ``s.seed``; results are merged in repeat order.
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    if not 0 < split < 1:
        raise ValueError("split must lie in (0, 1)")
    opts = opts or MethodOptions()
    result = BenchmarkResult(s.to_dict(), metric)
    seeds = np.random.SeedSequence(s.seed).generate_state(repeats)
    for r in range(repeats):
        rep_seed = int(seeds[r])
        ds, truth = generate(s.with_seed(rep_seed))
        perm = np.random.default_rng(rep_seed).permutation(ds.n)
        cut = int(round(split * ds.n))
        scored, rows = evaluate_split(ds, truth, np.sort(perm[:cut]), np.sort(perm[cut:]), methods,
                                      metric, opts, rep_seed, alphas, m_samples)
        result.reports.extend((m, lv, r, rep) for m, lv, rep in scored)
        if r == 0:
            result.plot_rows.extend(rows)
    return result
