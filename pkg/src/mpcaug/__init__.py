"""Parametric-sensitivity data augmentation for learning approximate MPC policies."""
from .augment import AugmentConfig, Dataset, Sampler, generate
from .nlp import ParametricNLP, PrimalDualPoint
from .policy import PolicyModel, fit
from .sensitivity import correct, predict, sensitivity_matrix
from .sqp import SolverConfig, solve

__version__ = "0.1.0"

__all__ = ["AugmentConfig", "Dataset", "ParametricNLP", "PolicyModel", "PrimalDualPoint",
           "Sampler", "SolverConfig", "correct", "fit", "generate", "predict",
           "sensitivity_matrix", "solve"]
