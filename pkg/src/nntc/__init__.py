"""Nonnegative tensor completion over the gauge-norm ball of binary rank-one tensors."""
from .bcg import SolverConfig, SolveStats, solve
from .experiments import generate_ground_truth, nmse, sample_observations
from .objective import LossState, gradient, loss
from .oracle import ResourceExhausted, exact_separation, weak_separation
from .tensor import Atom, Model, ObservationSet, Shape, reconstruct, reconstruct_dense

__all__ = [
    "Atom", "LossState", "Model", "ObservationSet", "ResourceExhausted", "Shape",
    "SolveStats", "SolverConfig", "exact_separation", "generate_ground_truth",
    "gradient", "loss", "nmse", "reconstruct", "reconstruct_dense",
    "sample_observations", "solve", "weak_separation",
]
__version__ = "0.1.0"
