"""Two-tower embedding models trained with a Gramian-estimated gravity penalty.

The gravity term ``g = (1/n^2) sum_ij <u_i, v_j>^2`` equals ``<G_u, G_v>`` for
the embedding Gramians ``G = U^T U / n``; the estimators here (exact,
batch sampling, SAGram, SOGram) track those Gramians during SGD.
"""

from .errors import DataError, GramtrainError, NumericalError, UsageError
from .gravity import (Estimator, EstimatorKind, GramianPair, LowRankPrior, estimation_error, exact_gramians,
                      gravity_exact, gravity_gram)
from .model import ModelParams, TowerConfig, forward, init_params, predict
from .trainer import TrainConfig, run

__all__ = [
    "DataError", "GramtrainError", "NumericalError", "UsageError",
    "Estimator", "EstimatorKind", "GramianPair", "LowRankPrior", "estimation_error", "exact_gramians",
    "gravity_exact", "gravity_gram",
    "ModelParams", "TowerConfig", "forward", "init_params", "predict",
    "TrainConfig", "run",
]
__version__ = "0.1.0"
