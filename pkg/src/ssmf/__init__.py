"""Sparse stochastic matrix factorization: V ~ W H with stochastic W and sparse stochastic H."""

from .data import SyntheticSpec, build_mnist_matrix, gen_synthetic, load_mnist
from .dense import RandomSource, read_matrix, spectral_norm_sym
from .errors import NumericalBreakdown, SsmfError
from .model import FactorPair, SsmfProblem, check_feasibility, init_random_feasible, objective_f
from .projections import project_masked_simplex, project_simplex, project_sparse_simplex
from .solvers import Algorithm, SolveResult, SolverConfig, StopReason, solve, solve_palm, solve_rowwise

__version__ = "0.1.0"

__all__ = [
    "Algorithm", "FactorPair", "NumericalBreakdown", "RandomSource", "SolveResult", "SolverConfig",
    "SsmfError", "SsmfProblem", "StopReason", "SyntheticSpec", "build_mnist_matrix",
    "check_feasibility", "gen_synthetic", "init_random_feasible", "load_mnist", "objective_f",
    "project_masked_simplex", "project_simplex", "project_sparse_simplex", "read_matrix",
    "solve", "solve_palm", "solve_rowwise", "spectral_norm_sym",
]
