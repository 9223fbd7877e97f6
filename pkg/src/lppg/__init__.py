"""Spectrally sparse signal recovery by low-rank Hankel completion."""
from .estimator import SpectralCompletion
from .hankel_ops import HankelOperator, HankelShape, LowRankPlusHankel
from .linalg import cg_solve, lanczos_truncated_svd
from .signals import ObservedData, SampleMask, add_noise, generate_signal, nmse, observe, sample_uniform
from .solver import LowRankIterate, SolverConfig, SolverTrace, solve

__version__ = "0.1.0"

__all__ = [
    "SpectralCompletion",
    "HankelShape",
    "HankelOperator",
    "LowRankPlusHankel",
    "lanczos_truncated_svd",
    "cg_solve",
    "ObservedData",
    "SampleMask",
    "generate_signal",
    "sample_uniform",
    "observe",
    "add_noise",
    "nmse",
    "SolverConfig",
    "SolverTrace",
    "LowRankIterate",
    "solve",
]
