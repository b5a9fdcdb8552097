"""Gram-operator solvers: FISTA/IST for l1 least squares and the power method.

Everything iterates through :class:`GramOperator`, which applies either the
exact Gram ``A^T A`` or its factored stand-in ``V^T D^T D V``. Solvers only
ever call ``G.apply(x, meter)``, so anything that offers the same method (the
distributed simulator, for instance) can be dropped in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .cssd import Factorization
from .linalg import CostMeter, DimensionError, as_dense, dense_matvec, sparse_matvec

__all__ = [
    "Classification",
    "ConvergenceError",
    "DivergenceError",
    "GramOperator",
    "IterationTrace",
    "SolverConfig",
    "classify",
    "estimate_lipschitz",
    "fista_objective",
    "fista_solve",
    "learning_error",
    "power_method",
    "psnr",
    "soft_threshold",
]

FOUR_STEP = "four_step"
COLLAPSED = "collapsed"


class DivergenceError(FloatingPointError):
    def __init__(self, step_size: float, iteration: int):
        super().__init__(f"non-finite iterate at iteration {iteration} (step size {step_size:g})")
        self.step_size = step_size
        self.iteration = iteration


class ConvergenceError(RuntimeError):
    """Power method ran out of iterations; carries the converged prefix."""

    def __init__(self, eigenvalues: np.ndarray, eigenvectors: np.ndarray, failed_index: int):
        super().__init__(
            f"eigenpair {failed_index} did not converge; {len(eigenvalues)} converged before it"
        )
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors
        self.failed_index = failed_index


class GramOperator:
    """``x -> A^T A x`` for a dense ``A`` or ``x -> V^T D^T D V x`` for a factorization.

    The factored operator runs the four-step flow ``p = Vx``, ``r = Dp``,
    ``q = D^T r``, ``z = V^T q`` by default, costing exactly
    ``2 * (nnz(V) + l*m)`` multiplications. ``flow="collapsed"`` replaces the
    middle two steps with one multiply by the cached ``l x l`` matrix ``D^T D``.
    """

    def __init__(self, A=None, factorization: Factorization | None = None, flow: str = FOUR_STEP):
        if (A is None) == (factorization is None):
            raise ValueError("give exactly one of A or factorization")
        if flow not in (FOUR_STEP, COLLAPSED):
            raise ValueError(f"unknown flow {flow!r}")
        self.A = None if A is None else as_dense(A)
        self.factorization = factorization
        self.flow = flow

    @classmethod
    def full(cls, A) -> "GramOperator":
        return cls(A=A)

    @classmethod
    def factored(cls, factorization: Factorization, flow: str = FOUR_STEP) -> "GramOperator":
        return cls(factorization=factorization, flow=flow)

    @property
    def is_factored(self) -> bool:
        return self.factorization is not None

    @property
    def shape(self) -> tuple[int, int]:
        n = self.n
        return (n, n)

    @property
    def n(self) -> int:
        return self.A.shape[1] if self.A is not None else self.factorization.n

    @property
    def m(self) -> int:
        return self.A.shape[0] if self.A is not None else self.factorization.m

    @cached_property
    def DtD(self) -> np.ndarray:
        D = self.factorization.D
        return np.asfortranarray(D.T @ D)

    @property
    def mults_per_apply(self) -> int:
        if self.A is not None:
            return 2 * self.A.size
        F = self.factorization
        if self.flow == COLLAPSED:
            return 2 * F.nnz + F.l * F.l
        return 2 * (F.nnz + F.l * F.m)

    def apply(self, x, meter: CostMeter | None = None) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise DimensionError(f"operator acts on length {self.n}, got {x.shape}")
        if self.A is not None:
            r = dense_matvec(self.A, x, meter=meter)
            return dense_matvec(self.A, r, transpose=True, meter=meter)
        F = self.factorization
        p = sparse_matvec(F.V, x, meter=meter)
        if self.flow == COLLAPSED:
            q = dense_matvec(self.DtD, p, meter=meter)
        else:
            r = dense_matvec(F.D, p, meter=meter)
            q = dense_matvec(F.D, r, transpose=True, meter=meter)
        return sparse_matvec(F.V, q, transpose=True, meter=meter)

    def correlate(self, y, meter: CostMeter | None = None) -> np.ndarray:
        """``A^T y`` (or ``(DV)^T y``): the iteration-invariant offset for FISTA."""
        y = np.ascontiguousarray(y, dtype=np.float64)
        if self.A is not None:
            return dense_matvec(self.A, y, transpose=True, meter=meter)
        F = self.factorization
        return sparse_matvec(F.V, dense_matvec(F.D, y, transpose=True, meter=meter), transpose=True, meter=meter)

    def __repr__(self):
        if self.A is not None:
            return f"GramOperator.full(m={self.m}, n={self.n})"
        F = self.factorization
        return f"GramOperator.factored(m={F.m}, l={F.l}, n={F.n}, nnz={F.nnz}, flow={self.flow!r})"


@dataclass(frozen=True)
class SolverConfig:
    step_size: float | None = None
    lam: float = 0.0
    max_iters: int = 500
    tol: float = 1e-8
    momentum: bool = True
    lipschitz_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


@dataclass
class IterationTrace:
    objective: list[float] = field(default_factory=list)
    residual_norm: list[float] = field(default_factory=list)
    step_norm: list[float] = field(default_factory=list)
    costs: list[dict] = field(default_factory=list)
    converged: bool = False
    step_size: float = float("nan")

    def __len__(self) -> int:
        return len(self.objective)

    def record(self, objective, residual, step, meter):
        self.objective.append(float(objective))
        self.residual_norm.append(float(residual))
        self.step_norm.append(float(step))
        self.costs.append(meter.snapshot() if meter is not None else {})

    def rows(self) -> list[dict]:
        return [
            {"iteration": i + 1, "objective": o, "residual_norm": r, "step_norm": s, **c}
            for i, (o, r, s, c) in enumerate(zip(self.objective, self.residual_norm, self.step_norm, self.costs))
        ]


def soft_threshold(v, tau: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def fista_objective(x, gx, aty, lam: float) -> float:
    """``0.5 x^T G x - x^T A^T y + lam ||x||_1``; equals the lasso objective minus ``0.5||y||^2``."""
    return 0.5 * float(x @ gx) - float(aty @ x) + lam * float(np.abs(x).sum())


def estimate_lipschitz(G, iters: int = 50, seed: int = 0, meter: CostMeter | None = None) -> float:
    """Largest-eigenvalue estimate ``rho + ||Gx - rho x||`` after ``iters`` power steps.

    The residual term lifts the Rayleigh quotient above the dominant
    eigenvalue once the iterate leans toward the top eigenvector.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(G.n)
    x /= np.linalg.norm(x)
    bound = 0.0
    for _ in range(max(1, iters)):
        y = G.apply(x, meter)
        rho = float(x @ y)
        bound = rho + float(np.linalg.norm(y - rho * x))
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            break
        x = y / ny
    return bound


def fista_solve(
    G,
    aty,
    cfg: SolverConfig,
    meter: CostMeter | None = None,
    stop_when: Callable[[np.ndarray], bool] | None = None,
) -> tuple[np.ndarray, IterationTrace]:
    """Minimize ``0.5||Ax - y||^2 + lam||x||_1`` given ``A^T y`` and the Gram operator.

    ``momentum=False`` runs plain iterative soft thresholding. One Gram
    application per iteration: the extrapolated point's gradient is formed
    from the two most recent ``G x`` products by linearity.
    """
    aty = np.ascontiguousarray(aty, dtype=np.float64)
    if aty.shape != (G.n,):
        raise DimensionError(f"A^T y must have length {G.n}, got {aty.shape}")
    if cfg.step_size is None:
        lip = estimate_lipschitz(G, cfg.lipschitz_iters, cfg.seed, meter)
        gamma = 1.0 / lip if lip > 0 else 1.0
    else:
        gamma = cfg.step_size
    trace = IterationTrace(step_size=gamma)
    thr = gamma * cfg.lam

    x_old = np.zeros(G.n)
    gx_old = np.zeros(G.n)
    y, gy = x_old, gx_old
    t = 1.0
    x = x_old
    for it in range(1, cfg.max_iters + 1):
        x = soft_threshold(y - gamma * (gy - aty), thr)
        gx = G.apply(x, meter)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(gx))):
            raise DivergenceError(gamma, it)
        step = float(np.linalg.norm(x - x_old))
        xn = float(np.linalg.norm(x))
        rel = step / xn if xn > 0 else (0.0 if step == 0 else math.inf)
        trace.record(fista_objective(x, gx, aty, cfg.lam), np.linalg.norm(gx - aty), step, meter)
        if rel < cfg.tol or (stop_when is not None and stop_when(x)):
            trace.converged = rel < cfg.tol
            break
        if cfg.momentum:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            t = t_next
        else:
            beta = 0.0
        y = x + beta * (x - x_old)
        gy = gx + beta * (gx - gx_old)
        x_old, gx_old = x, gx
    return x, trace


def power_method(
    G, num_eigs: int, cfg: SolverConfig, meter: CostMeter | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Top ``num_eigs`` eigenpairs, largest first.

    Earlier eigenvectors are projected out of every iterate (deflation without
    touching the operator). An eigenpair is accepted once
    ``||G x - sigma x|| <= cfg.tol * sigma``; an iterate whose image vanishes
    relative to the leading eigenvalue is accepted with eigenvalue 0.
    """
    n = G.n
    if not 0 <= num_eigs <= n:
        raise ValueError(f"num_eigs must lie in [0, {n}]")
    vals: list[float] = []
    vecs = np.zeros((n, num_eigs))
    rng = np.random.default_rng(cfg.seed)
    for k in range(num_eigs):
        basis = vecs[:, :k]

        def deflate(v):
            for _ in range(2):
                v = v - basis @ (basis.T @ v)
            if meter is not None:
                meter.charge(4 * n * k)
            return v

        x = deflate(rng.standard_normal(n))
        x /= np.linalg.norm(x)
        done = False
        for _ in range(cfg.max_iters):
            y = deflate(G.apply(x, meter))
            sigma = float(x @ y)
            ny = float(np.linalg.norm(y))
            scale = vals[0] if vals else abs(sigma)
            if ny <= 1e-13 * scale:
                sigma, done = 0.0, True
                break
            if np.linalg.norm(y - sigma * x) <= cfg.tol * abs(sigma):
                done = True
                break
            x = y / ny
        if not done:
            raise ConvergenceError(np.array(vals), vecs[:, :k].copy(), k)
        vals.append(sigma)
        vecs[:, k] = x
    return np.array(vals), vecs


def learning_error(reference, approx) -> float:
    """``||reference - approx|| / ||reference||``."""
    ref = np.asarray(reference, dtype=np.float64)
    app = np.asarray(approx, dtype=np.float64)
    if ref.shape != app.shape:
        raise DimensionError(f"length mismatch {ref.shape} vs {app.shape}")
    nr = float(np.linalg.norm(ref))
    if nr == 0.0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(ref - app)) / nr


def psnr(original, reconstructed, max_value: float) -> float:
    """``10 log10(MAX / sqrt(MSE))`` in dB; ``inf`` for an exact reconstruction."""
    y = np.asarray(original, dtype=np.float64)
    yh = np.asarray(reconstructed, dtype=np.float64)
    if y.shape != yh.shape:
        raise DimensionError("length mismatch")
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    mse = float(np.sum((y - yh) ** 2)) / y.size
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value / math.sqrt(mse))


@dataclass(frozen=True)
class Classification:
    label: int
    scores: dict
    no_support: bool = False


def classify(x, labels) -> Classification:
    """Class whose coefficients carry the largest total magnitude (lowest id on ties)."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.size == 0:
        raise ValueError("empty coefficient vector")
    if labels.shape != x.shape:
        raise DimensionError("one label per coefficient required")
    classes = sorted(set(labels.tolist()))
    scores = {c: float(np.abs(x[labels == c]).sum()) for c in classes}
    best = classes[0]
    for c in classes[1:]:
        if scores[c] > scores[best]:
            best = c
    return Classification(best, scores, no_support=not np.any(x))
