"""Soft-weighted unlearning for L2-regularized logistic regression.

Influence scores say how each training sample moves a validation functional;
a small QP turns them into per-sample weights; a Newton or gradient correction
applies the weights to the trained model.
"""

from ._backend import BACKEND
from .data import Dataset, gen_synthetic, load_csv, save_csv, split, standardize
from .engine import Method, UnlearnConfig, UnlearnReport, hard_weights, run_framework
from .errors import (
    ConvergenceError,
    DataError,
    NotPositiveDefiniteError,
    NumericalError,
    QPIterationError,
    SoftUnlearnError,
    StaleSnapshotError,
)
from .influence import InfluenceTable, influence_param, influence_scores
from .metrics import EvalSet, MetricKind, craft_adversarial, metric_value
from .model import ModelParams, Sample, TrainConfig, train
from .qp import QpInstance, WeightVector, classify_case, solve_analytic, solve_numeric

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConvergenceError",
    "DataError",
    "Dataset",
    "EvalSet",
    "InfluenceTable",
    "Method",
    "MetricKind",
    "ModelParams",
    "NotPositiveDefiniteError",
    "NumericalError",
    "QPIterationError",
    "QpInstance",
    "Sample",
    "SoftUnlearnError",
    "StaleSnapshotError",
    "TrainConfig",
    "UnlearnConfig",
    "UnlearnReport",
    "WeightVector",
    "classify_case",
    "craft_adversarial",
    "gen_synthetic",
    "hard_weights",
    "influence_param",
    "influence_scores",
    "load_csv",
    "metric_value",
    "run_framework",
    "save_csv",
    "solve_analytic",
    "solve_numeric",
    "split",
    "standardize",
    "train",
]
