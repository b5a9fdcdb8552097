"""Pick the loosest decomposition tolerance that keeps a learning task accurate.

Start at ``delta_d_max``, halve until the measured learning error meets the
target. Rounds share one :class:`~rankmap.cssd.ColumnSelector`, so a smaller
tolerance only adds columns to the previous selection.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cssd import ColumnSelector, CssdConfig, Factorization, encode_columns
from .linalg import as_dense
from .solvers import GramOperator, SolverConfig, fista_solve, learning_error, power_method

__all__ = [
    "TargetUnreachable",
    "TuneConfig",
    "TuneResult",
    "TuneRound",
    "eigenvalue_evaluator",
    "fista_evaluator",
    "halving_sequence",
    "tune",
]


class TargetUnreachable(RuntimeError):
    """No tested tolerance met the target; ``best`` is the ``(delta_d, delta_l)`` with smallest error."""

    def __init__(self, target: float, best: tuple[float, float], trace):
        super().__init__(
            f"learning error target {target:g} not reached; best was delta_l={best[1]:g} at delta_d={best[0]:g}"
        )
        self.target = target
        self.best = best
        self.trace = trace


@dataclass(frozen=True)
class TuneConfig:
    target_delta_l: float
    evaluate: Callable[[Factorization], float] = field(compare=False)
    delta_d_max: float = 0.4
    delta_d_min: float = 1e-3
    max_rounds: int | None = None
    max_cols: int = 64
    batch_size: int | None = None
    max_atoms_per_col: int | None = None
    seed: int = 0
    parallel: bool = False

    def __post_init__(self):
        if not 0.0 < self.delta_d_min < self.delta_d_max < 1.0:
            raise ValueError("need 0 < delta_d_min < delta_d_max < 1")
        if not self.target_delta_l > 0:
            raise ValueError("target_delta_l must be positive")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    def cssd(self, delta_d: float) -> CssdConfig:
        return CssdConfig(delta_d, self.max_cols, self.batch_size, self.max_atoms_per_col, self.seed)


@dataclass(frozen=True)
class TuneRound:
    delta_d: float
    delta_l: float
    l: int  # noqa: E741
    nnz: int
    selected: tuple[int, ...]


@dataclass
class TuneResult:
    delta_d: float
    factorization: Factorization
    trace: list[TuneRound]

    def pairs(self) -> list[tuple[float, float]]:
        return [(r.delta_d, r.delta_l) for r in self.trace]


def halving_sequence(delta_d_max: float, delta_d_min: float, max_rounds: int | None = None) -> list[float]:
    out, d = [], delta_d_max
    while d >= delta_d_min and (max_rounds is None or len(out) < max_rounds):
        out.append(d)
        d = d / 2.0
    return out


def _decompose_ladder(A, cfg: TuneConfig, ladder):
    """Yield ``(delta_d, Factorization)`` for each tolerance, resuming one selector."""
    selector = ColumnSelector(A, cfg.cssd(ladder[0]))
    for d in ladder:
        selected = selector.extend(d)
        yield d, encode_columns(A, selected, d, cfg.max_atoms_per_col, None, cfg.seed, selector.warnings)


def tune(A, cfg: TuneConfig) -> TuneResult:
    """Largest tested ``delta_d`` on the halving ladder whose learning error meets the target.

    With ``parallel=True`` the whole ladder is decomposed up front and the
    evaluations run concurrently; the answer is the same.
    """
    A = as_dense(A)
    ladder = halving_sequence(cfg.delta_d_max, cfg.delta_d_min, cfg.max_rounds)
    trace: list[TuneRound] = []
    facs: list[Factorization] = []

    def record(d, F, dl):
        trace.append(TuneRound(d, float(dl), F.l, F.nnz, F.selected))
        facs.append(F)

    if cfg.parallel:
        pairs = list(_decompose_ladder(A, cfg, ladder))
        with ThreadPoolExecutor() as ex:
            errs = list(ex.map(lambda p: cfg.evaluate(p[1]), pairs))
        for (d, F), dl in zip(pairs, errs):
            record(d, F, dl)
    else:
        for d, F in _decompose_ladder(A, cfg, ladder):
            record(d, F, cfg.evaluate(F))
            if trace[-1].delta_l <= cfg.target_delta_l:
                break

    for r, F in zip(trace, facs):
        if r.delta_l <= cfg.target_delta_l:
            return TuneResult(r.delta_d, F, trace)
    best = min(trace, key=lambda r: (r.delta_l, -r.delta_d))
    raise TargetUnreachable(cfg.target_delta_l, (best.delta_d, best.delta_l), trace)


# --------------------------------------------------------------------------
# Evaluators: Factorization -> learning error against the exact Gram
# --------------------------------------------------------------------------


def eigenvalue_evaluator(A, num_eigs: int, solver: SolverConfig | None = None) -> Callable[[Factorization], float]:
    """Relative error of the top ``num_eigs`` power-method eigenvalues."""
    solver = solver or SolverConfig(max_iters=5000, tol=1e-7)
    ref, _ = power_method(GramOperator.full(A), num_eigs, solver)

    def evaluate(F: Factorization) -> float:
        vals, _ = power_method(GramOperator.factored(F), num_eigs, solver)
        return learning_error(ref, vals)

    evaluate.reference = ref
    return evaluate


def fista_evaluator(
    A,
    probes: int = 10,
    lam: float = 0.1,
    solver: SolverConfig | None = None,
    seed: int = 0,
    atoms_per_probe: int = 5,
    noise: float = 0.01,
) -> Callable[[Factorization], float]:
    """Mean relative error of lasso solutions over held-out probe signals.

    Each probe is a random combination of a few columns of ``A`` plus
    Gaussian noise. Probes are solved concurrently.
    """
    A = as_dense(A)
    m, n = A.shape
    solver = solver or SolverConfig(lam=lam, max_iters=300, tol=1e-6)
    if solver.lam != lam:
        solver = SolverConfig(solver.step_size, lam, solver.max_iters, solver.tol, solver.momentum,
                              solver.lipschitz_iters, solver.seed)
    rng = np.random.default_rng(seed)
    ys = []
    for _ in range(probes):
        cols = rng.choice(n, size=min(atoms_per_probe, n), replace=False)
        y = A[:, cols] @ rng.standard_normal(cols.size)
        ys.append(y + noise * np.linalg.norm(y) / math.sqrt(m) * rng.standard_normal(m))
    full = GramOperator.full(A)

    def solve_all(G, correlate):
        with ThreadPoolExecutor() as ex:
            return list(ex.map(lambda y: fista_solve(G, correlate(y), solver)[0], ys))

    refs = solve_all(full, full.correlate)

    def evaluate(F: Factorization) -> float:
        G = GramOperator.factored(F)
        # same right-hand side as the reference: only the Gram operator is approximated
        sols = solve_all(G, full.correlate)
        return float(np.mean([learning_error(r, s) for r, s in zip(refs, sols) if np.any(r)]))

    evaluate.probes = ys
    return evaluate
