"""Distributional random forests: forest weights for full conditional distributions."""

__version__ = "0.1.0"

from .data import Dataset, DataError, IngestOptions, ResponseScaler, fit_scaler, load_csv
from .estimators import (ConditionalDistribution, cdf, copula_sample, correlation_matrix, cov_corr,
                         do_average, expect, hsic, quantile, resample, weighted_mle)
from .forest import Forest, ForestConfig, ForestFormatError, WeightVector, fit, variable_importance
from .kernel import median_heuristic
from .tree import TreeConfig

__all__ = [
    "ConditionalDistribution", "DataError", "Dataset", "Forest", "ForestConfig", "ForestFormatError",
    "IngestOptions", "ResponseScaler", "TreeConfig", "WeightVector", "cdf", "copula_sample",
    "correlation_matrix", "cov_corr", "do_average", "expect", "fit", "fit_scaler", "hsic",
    "load_csv", "median_heuristic", "quantile", "resample", "variable_importance", "weighted_mle",
]
