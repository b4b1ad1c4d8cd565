"""Covariate adjustment and variable selection for randomized trials."""

from .dataset import BinaryTrial, DataError, TrialDataset, encode_treatment, load_csv
from .estimators import AteEstimate, PotentialMeans, aipw, ancova, anhecova, simple_estimator
from .imputation import ImputationSpec, impute
from .selection import SelectionResult, SelectionSpec, select

__all__ = [
    "AteEstimate",
    "BinaryTrial",
    "DataError",
    "ImputationSpec",
    "PotentialMeans",
    "SelectionResult",
    "SelectionSpec",
    "TrialDataset",
    "aipw",
    "ancova",
    "anhecova",
    "encode_treatment",
    "impute",
    "load_csv",
    "select",
    "simple_estimator",
]
