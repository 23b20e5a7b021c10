"""Adversarial Predictor/Judge networks for answer selection and sentence classification."""
from .autodiff import ContractError, NumericFault, ShapeError, Tape, Tensor, backward
from .kernels import BACKEND
from .training import (ArchConfig, GameConfig, TrainingDiverged, evaluate_predictor, train_dan,
                       train_hinge_baseline, train_nll_baseline)

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "BACKEND", "ContractError", "GameConfig", "NumericFault", "ShapeError", "Tape",
    "Tensor", "TrainingDiverged", "backward", "evaluate_predictor", "train_dan",
    "train_hinge_baseline", "train_nll_baseline",
]
