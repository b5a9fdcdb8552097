"""Benchmark harness: tolerance sweeps, model comparisons and memory tables.

Every function returns plain rows (lists of dicts) with deterministic content;
wall-clock times are returned separately so report files stay byte-stable.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cssd import ColumnSelector, CssdConfig, Factorization, encode_columns
from .linalg import SparseColMatrix, as_dense
from .solvers import GramOperator, SolverConfig, learning_error, power_method

__all__ = [
    "DEFAULT_SWEEP",
    "RunReport",
    "least_squares_coefficients",
    "memory_table",
    "random_factorization",
    "sweep",
    "write_csv",
    "write_json",
]

DEFAULT_SWEEP = (0.4, 0.2, 0.1, 0.05, 0.001)


@dataclass
class RunReport:
    config: dict
    factorization: dict | None = None
    traces: dict = field(default_factory=dict)
    costs: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n")


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# --------------------------------------------------------------------------
# Tolerance sweep
# --------------------------------------------------------------------------


def sweep(
    A,
    deltas=DEFAULT_SWEEP,
    num_eigs: int = 20,
    max_cols: int = 128,
    seed: int = 0,
    solver: SolverConfig | None = None,
    max_atoms_per_col: int | None = None,
):
    """Decompose at each tolerance (largest first, resuming one selection) and
    measure the power-method eigenvalue error against the exact Gram.

    Returns ``(rows, timings)``: ``rows`` is long-form, one per
    ``(delta_d, metric)``; ``timings`` maps each tolerance to seconds spent.
    """
    A = as_dense(A)
    solver = solver or SolverConfig(max_iters=5000, tol=1e-7)
    deltas = sorted(set(float(d) for d in deltas), reverse=True)
    num_eigs = min(num_eigs, A.shape[1])
    ref, _ = power_method(GramOperator.full(A), num_eigs, solver)
    max_cols = min(max_cols, A.shape[1])
    selector = ColumnSelector(A, CssdConfig(deltas[0], max_cols, None, max_atoms_per_col, seed))
    rows, timings = [], {}
    for d in deltas:
        t0 = time.perf_counter()
        F = encode_columns(A, selector.extend(d), d, max_atoms_per_col, None, seed, selector.warnings)
        vals, _ = power_method(GramOperator.factored(F), num_eigs, solver)
        timings[d] = time.perf_counter() - t0
        G = GramOperator.factored(F)
        metrics = {
            "l": F.l,
            "nnz_V": F.nnz,
            "density": F.density,
            "achieved_delta": F.achieved_delta,
            "delta_l": learning_error(ref, vals),
            "mults_per_apply": G.mults_per_apply,
            "full_mults_per_apply": 2 * A.size,
        }
        rows += [{"delta_d": d, "metric": k, "value": v} for k, v in metrics.items()]
    return rows, timings


# --------------------------------------------------------------------------
# Memory
# --------------------------------------------------------------------------


def least_squares_coefficients(A, D) -> np.ndarray:
    """Dense ``V`` minimizing ``||A - D V||_F`` for a fixed ``D``."""
    return np.linalg.lstsq(np.asarray(D), np.asarray(A), rcond=None)[0]


def memory_table(A, F_omp: Factorization, V_ls=None, name: str = "") -> dict:
    """Stored entries of the three representations of ``A``.

    ``rankmap`` counts the values only (``m l + nnz``); ``rankmap_with_indices``
    adds one row index per non-zero and the column pointers, and
    ``beneficial`` says whether that still beats the dense least-squares ``V``.
    """
    A = np.asarray(A)
    m, n = A.shape
    l = F_omp.l  # noqa: E741
    if V_ls is None:
        V_ls = least_squares_coefficients(A, F_omp.D)
    V_ls = np.asarray(V_ls)
    if V_ls.shape != (l, n):
        raise ValueError(f"least-squares V must be {l}x{n}, got {V_ls.shape}")
    original = m * n
    ls = m * l + V_ls.size
    rankmap = m * l + F_omp.nnz
    stored = m * l + 2 * F_omp.nnz + n + 1
    return {
        "dataset": name,
        "m": m,
        "n": n,
        "l": l,
        "original": original,
        "least_squares": ls,
        "rankmap": rankmap,
        "rankmap_with_indices": stored,
        "least_squares_ratio": original / ls,
        "rankmap_ratio": original / rankmap,
        "beneficial": stored < ls,
    }


# --------------------------------------------------------------------------
# Synthetic factorizations for model comparisons
# --------------------------------------------------------------------------


def random_factorization(m: int, n: int, l: int, nnz_per_col: int, seed: int = 0) -> Factorization:  # noqa: E741
    """Unit-norm Gaussian ``D`` and a ``V`` with ``nnz_per_col`` random rows per column.

    Lets density and ``l`` vary independently of any data matrix.
    """
    if not 1 <= nnz_per_col <= l:
        raise ValueError("need 1 <= nnz_per_col <= l")
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((m, l))
    D /= np.linalg.norm(D, axis=0)
    cols = []
    for _ in range(n):
        rows = rng.choice(l, size=nnz_per_col, replace=False)
        vals = rng.standard_normal(nnz_per_col)
        vals[vals == 0.0] = 1.0
        cols.append((rows, vals))
    return Factorization(
        D=as_dense(D),
        V=SparseColMatrix.from_columns(l, cols),
        selected=tuple(range(l)),
        delta_d=0.0,
        residuals=np.zeros(n),
        seed=seed,
    )
