"""Doubly robust learning of conditional distributional treatment effects."""

from .crossfit import NuisanceConfig, cdte_learn, crossfit, fit_nuisances, plugin_learn
from .dataset import Dataset, assign_folds, load_csv, split
from .errors import CDTEError
from .inference import FeatureMap, ols_project
from .pseudo import pseudo_outcome, pseudo_outcomes
from .statistics import StatisticSpec

__all__ = [
    "CDTEError",
    "Dataset",
    "FeatureMap",
    "NuisanceConfig",
    "StatisticSpec",
    "assign_folds",
    "cdte_learn",
    "crossfit",
    "fit_nuisances",
    "load_csv",
    "ols_project",
    "plugin_learn",
    "pseudo_outcome",
    "pseudo_outcomes",
    "split",
]

__version__ = "0.1.0"
