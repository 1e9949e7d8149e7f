from .conditional import (
    DENSITY_FLOOR,
    ConstantRegressor,
    FlooredRegressor,
    WeightedStatisticModel,
    density_at_quantile,
    fit_weighted_quantile,
    forest_factory,
    half_split,
    kernel_evar,
    linear_quantile_learner,
    make_weighter,
    ols_factory,
    qrf_quantile,
    sqrf_superquantile,
    two_stage_superquantile,
)
from .forest import Forest, ForestClassifier, ForestParams, fit_forest, fit_forest_classifier, forest_weights
from .kernel import KernelWeighter, kernel_weights, silverman_bandwidth
from .linear import (
    PROPENSITY_CLIP,
    ConstantPropensity,
    LinearModel,
    LogisticModel,
    fit_linear_quantile,
    fit_logistic,
    fit_ols,
    lstsq_qr,
)

__all__ = [
    "DENSITY_FLOOR", "PROPENSITY_CLIP", "ConstantPropensity", "ConstantRegressor", "FlooredRegressor",
    "Forest", "ForestClassifier", "ForestParams", "KernelWeighter", "LinearModel", "LogisticModel",
    "WeightedStatisticModel", "density_at_quantile", "fit_forest", "fit_forest_classifier",
    "fit_linear_quantile", "fit_logistic", "fit_ols", "fit_weighted_quantile", "forest_factory",
    "forest_weights", "half_split", "kernel_evar", "kernel_weights", "linear_quantile_learner",
    "lstsq_qr", "make_weighter", "ols_factory", "qrf_quantile", "silverman_bandwidth",
    "sqrf_superquantile", "two_stage_superquantile",
]
