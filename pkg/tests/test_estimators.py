import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distforest.data import Dataset
from distforest.estimators import (ConditionalDistribution, cdf, copula_sample, correlation_matrix, cov_corr,
                                   do_average, expect, hsic, quantile, resample, silverman_bandwidth,
                                   weighted_mle, weighted_quantiles)
from distforest.forest import ForestConfig, WeightVector, fit


def uniform_cd(values):
    y = np.asarray(values, dtype=float)
    return ConditionalDistribution.from_dense(np.full(len(y), 1.0 / len(y)), y)


def point_mass(atom, n=5, at=2):
    y = np.arange(n, dtype=float)[:, None] * np.ones((1, len(np.atleast_1d(atom))))
    y[at] = atom
    w = np.zeros(n)
    w[at] = 1.0
    return ConditionalDistribution.from_dense(w, y)


def test_cdf_examples():
    cd = uniform_cd([1, 2, 3, 4])
    assert cdf(cd, [np.inf]) == 1.0
    assert cdf(cd, [0.5]) == 0.0
    assert cdf(cd, [2.5]) == 0.5
    with pytest.raises(ValueError):
        cdf(cd, [1.0, 2.0])


def test_quantile_examples():
    cd = uniform_cd([4, 1, 3, 2])
    assert quantile(cd, 0.5) == 2.0
    assert quantile(cd, 0.5 + 1e-9) == 3.0
    assert quantile(cd, 1 - 1e-9) == 4.0
    for a in (0.01, 0.5, 0.99):
        assert quantile(point_mass(7.0), a) == 7.0
    thirds = ConditionalDistribution.from_dense([1 / 3] * 3, [1.0, 2.0, 3.0])
    assert quantile(thirds, 2 / 3) == 2.0
    with pytest.raises(ValueError):
        quantile(cd, 1.0)


def test_expect_examples():
    cd = uniform_cd([1, 2, 3, 4])
    assert expect(cd, lambda y: 1.0) == 1.0
    assert expect(cd, lambda y: y[0]) == 2.5
    assert expect(cd, lambda y: float(y[0] <= 2.5)) == cdf(cd, [2.5])
    with pytest.raises(ValueError, match="row 0"):
        expect(cd, lambda y: math.log(y[0] - 1))


def test_cov_corr_examples():
    y = np.random.default_rng(0).normal(size=(30, 1))
    cd = ConditionalDistribution.from_dense(np.full(30, 1 / 30), np.hstack([y, y]))
    assert cov_corr(cd, 0, 1).correlation == pytest.approx(1.0)
    cd = ConditionalDistribution.from_dense([0.5, 0.5], [[1.0, -1.0], [-1.0, 1.0]])
    r = cov_corr(cd, 0, 1)
    assert r.correlation == -1.0 and r.covariance == -1.0
    cd = ConditionalDistribution.from_dense([0.5, 0.5], [[1.0, 3.0], [2.0, 3.0]])
    r = cov_corr(cd, 0, 1)
    assert not r.defined and math.isnan(r.correlation) and r.covariance == 0.0


def test_copula_sample_examples():
    y = np.random.default_rng(1).normal(size=20)
    cs = copula_sample(ConditionalDistribution.from_dense(np.full(20, 0.05), np.column_stack([y, y])))
    np.testing.assert_array_equal(cs.u_points[:, 0], cs.u_points[:, 1])
    assert cs.weights.sum() == pytest.approx(1.0)
    cs = copula_sample(point_mass([1.0, 5.0]))
    np.testing.assert_array_equal(cs.u_points, [[1.0, 1.0]])
    with pytest.raises(ValueError):
        copula_sample(uniform_cd([1, 2, 3]))


def test_copula_marginals_are_uniform():
    rng = np.random.default_rng(2)
    n = 200
    w = rng.random(n)
    cd = ConditionalDistribution.from_dense(w / w.sum(), rng.normal(size=(n, 3)))
    cs = copula_sample(cd)
    assert np.all((cs.u_points >= 0) & (cs.u_points <= 1))
    for c in range(3):
        for g in np.linspace(0.05, 0.95, 19):
            mass = cs.weights[cs.u_points[:, c] <= g].sum()
            assert g - cd.w.max() - 1e-12 <= mass <= g + 1e-12


def test_hsic_examples():
    rng = np.random.default_rng(3)
    a = rng.normal(size=40)
    w = np.full(40, 1 / 40)
    const = ConditionalDistribution.from_dense(w, np.column_stack([a, np.full(40, 2.0)]))
    assert abs(hsic(const, [0], [1])) < 1e-10
    copy = ConditionalDistribution.from_dense(w, np.column_stack([a, a]))
    indep = ConditionalDistribution.from_dense(w, np.column_stack([a, rng.normal(size=40)]))
    assert hsic(copy, [0], [1]) > hsic(indep, [0], [1]) > -1e-10
    with pytest.raises(ValueError):
        hsic(copy, [0], [0])
    with pytest.raises(ValueError):
        hsic(copy, [0], [1], sigma_a=-1.0)


def test_hsic_matches_centered_gram_formula():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(25, 3))
    w = rng.random(25)
    w /= w.sum()
    cd = ConditionalDistribution.from_dense(w, y)
    from distforest.kernel import gaussian_gram
    K, L = gaussian_gram(y[:, :1], y[:, :1], 0.8), gaussian_gram(y[:, 1:], y[:, 1:], 1.3)
    H = np.eye(25) - np.outer(np.ones(25), w)
    oracle = np.sum(np.outer(w, w) * (H @ K @ H.T) * L)
    assert hsic(cd, [0], [1, 2], 0.8, 1.3) == pytest.approx(oracle, rel=1e-10)


def test_resample():
    cd = point_mass(3.5)
    np.testing.assert_array_equal(resample(cd, 10, 0), np.full((10, 1), 3.5))
    cd = ConditionalDistribution.from_dense([0.5, 0.5], [0.0, 1.0])
    draws = resample(cd, 100_000, 1)
    assert abs(draws.mean() - 0.5) < 0.01
    np.testing.assert_array_equal(resample(cd, 50, 7), resample(cd, 50, 7))
    rng = np.random.default_rng(5)
    w = rng.random(8)
    w /= w.sum()
    cd = ConditionalDistribution.from_dense(w, np.arange(8.0))
    freq = np.bincount(resample(cd, 100_000, 2)[:, 0].astype(int), minlength=8) / 1e5
    assert np.abs(freq - w).sum() < 0.02


def gauss_loc(theta, y):
    return -0.5 * (y[0] - theta[0]) ** 2


def test_weighted_mle():
    cd = ConditionalDistribution.from_dense([0.5, 0.5], [0.0, 2.0])
    res = weighted_mle(cd, gauss_loc, [0.3])
    assert res.converged and res.theta[0] == pytest.approx(1.0, abs=1e-6)
    res2 = weighted_mle(cd, lambda th, y: 2 * gauss_loc(th, y), [0.3])
    assert res2.theta[0] == pytest.approx(res.theta[0], abs=1e-6)
    assert weighted_mle(point_mass(4.0), gauss_loc, [0.0]).theta[0] == pytest.approx(4.0, abs=1e-6)

    def normal(th, y):
        return -math.log(th[1]) - 0.5 * ((y[0] - th[0]) / th[1]) ** 2
    y = np.random.default_rng(6).normal(3.0, 2.0, size=400)
    res = weighted_mle(uniform_cd(y), normal, [0.0, 1.0], bounds=[(-10, 10), (0.1, 10)])
    assert res.theta[0] == pytest.approx(y.mean(), abs=1e-4)
    assert res.theta[1] == pytest.approx(y.std(), abs=1e-4)
    with pytest.raises(ValueError, match="theta"):
        weighted_mle(cd, lambda th, y: -(th[0] + 0.9) ** 2 if th[0] > -0.5 else float("nan"), [0.0],
                     bounds=[(-1, 2)])


def test_weighted_quantiles_match_scalar():
    rng = np.random.default_rng(7)
    y = rng.integers(0, 6, size=30).astype(float)
    W = rng.random((10, 30))
    W /= W.sum(axis=1, keepdims=True)
    levels = (0.1, 0.3, 0.5, 0.9)
    Q = weighted_quantiles(W, y, levels)
    for q in range(10):
        cd = ConditionalDistribution.from_dense(W[q], y)
        assert [quantile(cd, a) for a in levels] == Q[q].tolist()


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31), st.floats(0.001, 0.999))
def test_quantile_cdf_consistency(n, seed, a):
    rng = np.random.default_rng(seed)
    y = rng.integers(-5, 5, size=n).astype(float)
    w = rng.random(n) + 1e-3
    cd = ConditionalDistribution.from_dense(w / w.sum(), y)
    q = quantile(cd, a)
    assert cdf(cd, [q]) >= a - 1e-12
    assert cdf(cd, [q - 0.5]) < a


def test_estimators_are_pure_functions_of_weights():
    rng = np.random.default_rng(8)
    y = rng.normal(size=(30, 2))
    w = rng.random(30)
    w /= w.sum()
    a = ConditionalDistribution(WeightVector.from_dense(w), y)
    b = ConditionalDistribution(WeightVector.from_dense(w.copy()), y.copy())
    assert quantile(a, 0.3, 1) == quantile(b, 0.3, 1)
    assert cov_corr(a, 0, 1) == cov_corr(b, 0, 1)
    assert hsic(a, [0], [1]) == hsic(b, [0], [1])


def test_correlation_matrix_is_psd():
    rng = np.random.default_rng(9)
    for _ in range(50):
        w = rng.random(40) ** 4
        cd = ConditionalDistribution.from_dense(w / w.sum(), rng.normal(size=(40, 4)) @ rng.normal(size=(4, 4)))
        R = correlation_matrix(cd)
        np.testing.assert_allclose(R, R.T)
        assert np.linalg.eigvalsh(R).min() > -1e-8


def test_do_average_identity_curve():
    rng = np.random.default_rng(10)
    n = 2000
    x = rng.uniform(0, 1, size=(n, 3))
    wt = rng.normal(0, 1, size=n)
    ds = Dataset.from_arrays(x, np.column_stack([wt, wt]))
    f = fit(ds, ForestConfig(num_trees=100, seed=0))
    grid = np.linspace(-1, 1, 9)
    res = do_average(f, grid, x[:200])
    assert res.available.all()
    assert np.max(np.abs(res.estimate - grid)) < 0.1
    one = do_average(f, grid, x[:1])
    cd = f.weights(x[0]).dense()
    G = np.exp(-0.5 * ((wt[:, None] - grid) / res.bandwidth) ** 2)
    np.testing.assert_allclose(one.estimate, (cd @ (G * wt[:, None])) / (cd @ G), rtol=1e-12)


def test_do_average_flags_unsupported_points():
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, size=(200, 2))
    wt = rng.uniform(0, 1, size=200)
    ds = Dataset.from_arrays(x, np.column_stack([wt, 2 * wt]))
    f = fit(ds, ForestConfig(num_trees=20, seed=0))
    res = do_average(f, [0.5, 1e4], x[:5], smoother_bw=0.01)
    assert res.available.tolist() == [True, False]
    assert math.isnan(res.estimate[1]) and res.n_used[1] == 0
    with pytest.raises(ValueError):
        do_average(f, [0.5], np.zeros((0, 2)))


def test_silverman_bandwidth():
    v = np.random.default_rng(12).normal(size=1000)
    iqr = np.subtract(*np.percentile(v, [75, 25]))
    assert silverman_bandwidth(v) == pytest.approx(0.9 * min(v.std(ddof=1), iqr / 1.34) * 1000 ** -0.2)
    with pytest.raises(ValueError):
        silverman_bandwidth(np.ones(10))
