"""
Conditional correlation, copula and HSIC
========================================

Y is a 5-dimensional equicorrelated Gaussian with correlation x1, so all
marginals are N(0, 1) and only the dependence changes. We read the
conditional correlation, a copula sample, a weighted MLE of the copula
parameter and the HSIC off one weight vector per query point.
"""
import numpy as np
from scipy.stats import norm

from distforest import ForestConfig, fit
from distforest.estimators import ConditionalDistribution, copula_sample, cov_corr, hsic, weighted_mle
from distforest.eval import Scenario, generate

ds, truth = generate(Scenario("copula", n=3000, p=10, seed=0))
f = fit(ds, ForestConfig(num_trees=300, seed=0))

grid = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
X = np.full((grid.size, ds.p), 0.5)
X[:, 0] = grid
W = f.weight_matrix(X)


def gauss_copula_loglik(theta, u):
    # bivariate Gaussian copula density on normal scores
    r = np.tanh(theta[0])
    a, b = norm.ppf(np.clip(u, 1e-6, 1 - 1e-6))
    return -0.5 * np.log1p(-r * r) - (r * r * (a * a + b * b) - 2 * r * a * b) / (2 * (1 - r * r))


print("  x1   corr   mle    hsic   support")
for x1, w in zip(grid, W):
    cd = ConditionalDistribution.from_dense(w, f.y_train)
    cs = copula_sample(cd)
    # the copula points carry the same weights as the training rows
    cop = ConditionalDistribution.from_dense(cs.weights, cs.u_points[:, :2] * (1 - 1e-9))
    mle = weighted_mle(cop, gauss_copula_loglik, [0.0], bounds=[(-3, 3)])
    print(f"{x1:5.1f} {cov_corr(cd, 0, 1).correlation:6.3f} {np.tanh(mle.theta[0]):6.3f} "
          f"{hsic(cd, [0], [1]):7.4f} {np.count_nonzero(w):6d}")
