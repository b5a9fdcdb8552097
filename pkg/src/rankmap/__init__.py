"""Sparse column-selection factorization ``A ~= D V`` and the Gram-operator
workloads (l1 least squares, eigenvalues) it accelerates."""

from .cssd import ColumnSelector, CssdConfig, Factorization, decompose, encode_columns, omp_encode
from .linalg import CostMeter, SparseColMatrix
from .solvers import GramOperator, SolverConfig, fista_solve, learning_error, power_method, psnr

__all__ = [
    "ColumnSelector",
    "CostMeter",
    "CssdConfig",
    "Factorization",
    "GramOperator",
    "SolverConfig",
    "SparseColMatrix",
    "decompose",
    "encode_columns",
    "fista_solve",
    "learning_error",
    "omp_encode",
    "power_method",
    "psnr",
]
