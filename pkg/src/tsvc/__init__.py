"""Tree-structured varying-coefficient generalized linear models."""

from .algorithm import FitConfig, deviance_aic, fit_tsvc, linear_term_screen
from .data import (
    Branch,
    CoefficientTree,
    Column,
    Dataset,
    ModelStructure,
    Region,
    SplitRecord,
    TsvcModel,
    build_design,
    predict,
    region_indicator,
)
from .glm import Family, GlmFit, fit_glm
from .permutation import PermTestResult, alpha_local, permutation_test
from .splits import CurrentModel, MaxSelected, SplitCandidate, candidate_split_points, max_selected, score_split

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "CoefficientTree",
    "Column",
    "CurrentModel",
    "Dataset",
    "Family",
    "FitConfig",
    "GlmFit",
    "MaxSelected",
    "ModelStructure",
    "PermTestResult",
    "Region",
    "SplitCandidate",
    "SplitRecord",
    "TsvcModel",
    "alpha_local",
    "build_design",
    "candidate_split_points",
    "deviance_aic",
    "fit_glm",
    "fit_tsvc",
    "linear_term_screen",
    "max_selected",
    "permutation_test",
    "predict",
    "region_indicator",
    "score_split",
]
