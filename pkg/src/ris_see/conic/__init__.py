"""Conic modeling, solving and SDR post-processing."""
from .backends import DEFAULT_TOL, ConicSolution, SolverError, solve
from .model import Affine, ConicProgram, bmat, compile_program, concat, embed_hermitian
from .sdr import (
    DEFAULT_RANK_TOL,
    DEFAULT_TRIALS,
    RandomizationFailure,
    extract_rank_one,
    gaussian_randomize,
    principal_vector,
    project_phases,
    rank_one_ratio,
    scale_to_power,
)

__all__ = [
    "Affine", "ConicProgram", "ConicSolution", "SolverError", "bmat", "concat",
    "compile_program", "embed_hermitian", "solve", "DEFAULT_TOL", "DEFAULT_RANK_TOL",
    "DEFAULT_TRIALS", "RandomizationFailure", "extract_rank_one", "gaussian_randomize",
    "principal_vector", "project_phases", "rank_one_ratio", "scale_to_power",
]
