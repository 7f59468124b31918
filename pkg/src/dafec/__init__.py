"""Inductive unsupervised domain adaptation for few-shot classification via clustering."""

from .errors import CapacityError, DafecError, InvalidArgumentError, InvariantError, NumericError, StageError
from .pipeline import TrainConfig, run_all
from .synthetic import SyntheticSpec, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "DafecError",
    "InvalidArgumentError",
    "InvariantError",
    "NumericError",
    "StageError",
    "SyntheticSpec",
    "TrainConfig",
    "generate_synthetic",
    "run_all",
]
