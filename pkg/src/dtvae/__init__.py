"""Variational autoencoder with a dyadic (identity plus low-rank) posterior transform."""

from .dyadic import DyadicGrads, DyadicTransform
from .gaussian import DiagGaussian, NonPDPosteriorError, ReparamSample
from .linalg import ContractError, SingularMatrixError
from .nn import ModelConfig, ModelParams, PoisonedUpdateError
from .vae import ElboBreakdown, TrainConfig

__all__ = [
    "ContractError", "DiagGaussian", "DyadicGrads", "DyadicTransform", "ElboBreakdown",
    "ModelConfig", "ModelParams", "NonPDPosteriorError", "PoisonedUpdateError", "ReparamSample",
    "SingularMatrixError", "TrainConfig",
]

__version__ = "0.1.0"
