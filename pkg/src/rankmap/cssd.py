"""Column-selection sparse decomposition ``A ~= D @ V``.

Step 1 picks columns of ``A`` adaptively: each round samples a batch with
probability proportional to the relative residual of every column against the
span of the columns chosen so far. Step 2 codes every column of ``A`` against
the normalized selection with Batch-OMP (shared dictionary Gram, progressive
Cholesky of the active set, residual energy tracked by recurrence).

The tolerance ``delta_d`` is relative: column ``i`` is accepted once
``||a_i - D v_i|| <= delta_d * ||a_i||``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .linalg import (
    CostMeter,
    SparseColMatrix,
    as_dense,
    column_norms,
    orthonormal_basis,
)

__all__ = [
    "EXACT_FLOOR",
    "ColumnSelector",
    "CssdConfig",
    "DegenerateInputError",
    "Factorization",
    "ZeroColumnWarning",
    "decompose",
    "encode_columns",
    "omp_encode",
    "select_columns",
    "selection_distribution",
]

# Relative residuals at or below this are numerically zero. Without it a
# ``delta_d = 0`` run on exactly low-rank data would keep sampling columns
# whose residual is rounding noise.
EXACT_FLOOR = 1e-10

# Squared relative residual below which the Batch-OMP energy recurrence is no
# longer trusted and the residual is recomputed explicitly.
_RECURRENCE_RESOLUTION = 1e-8

_PROJECT_BLOCK = 4096


class DegenerateInputError(ValueError):
    pass


class ZeroColumnWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CssdConfig:
    delta_d: float = 0.1
    max_cols: int = 64
    batch_size: int | None = None
    max_atoms_per_col: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta_d < 1.0:
            raise ValueError(f"delta_d must lie in [0, 1), got {self.delta_d}")
        if self.max_cols < 1:
            raise ValueError("max_cols must be >= 1")
        if not 1 <= self.ls <= self.max_cols:
            raise ValueError(f"batch_size must lie in [1, max_cols], got {self.ls}")
        if self.max_atoms_per_col is not None and self.max_atoms_per_col < 1:
            raise ValueError("max_atoms_per_col must be >= 1")

    @property
    def ls(self) -> int:
        if self.batch_size is None:
            return max(1, self.max_cols // 10)
        return int(self.batch_size)


@dataclass(frozen=True)
class Factorization:
    """``D`` (unit-norm selected columns), sparse codes ``V`` and bookkeeping."""

    D: np.ndarray
    V: SparseColMatrix
    selected: tuple[int, ...]
    delta_d: float
    residuals: np.ndarray = field(repr=False)
    seed: int = 0
    warnings: tuple[str, ...] = ()

    @property
    def m(self) -> int:
        return self.D.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.D.shape[1]

    @property
    def n(self) -> int:
        return self.V.shape[1]

    @property
    def nnz(self) -> int:
        return self.V.nnz

    @property
    def density(self) -> float:
        """``nnz(V) / (m * n)``: non-zeros relative to a dense ``A``."""
        return self.nnz / float(self.m * self.n)

    @property
    def achieved_delta(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0

    @property
    def success(self) -> bool:
        return self.achieved_delta <= max(self.delta_d, EXACT_FLOOR)

    def reconstruct(self) -> np.ndarray:
        return self.D @ self.V.to_dense()

    def summary(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "l": self.l,
            "nnz_V": self.nnz,
            "density": self.density,
            "delta_d": self.delta_d,
            "achieved_delta": self.achieved_delta,
            "success": self.success,
        }


# --------------------------------------------------------------------------
# Step 1
# --------------------------------------------------------------------------


def _relative_residuals(A, Q, norms, meter=None) -> np.ndarray:
    """``||a_i - Q Q^T a_i|| / ||a_i||`` with zero-norm columns scored 0."""
    m, n = A.shape
    k = Q.shape[1]
    out = np.zeros(n)
    for lo in range(0, n, _PROJECT_BLOCK):
        hi = min(n, lo + _PROJECT_BLOCK)
        block = A[:, lo:hi]
        E = block - Q @ (Q.T @ block) if k else block
        out[lo:hi] = np.sqrt(np.einsum("ij,ij->j", E, E))
    if meter is not None:
        meter.charge(2 * m * k * n + m * n)
    nz = norms > 0
    out[nz] /= norms[nz]
    out[~nz] = 0.0
    out[out <= EXACT_FLOOR] = 0.0
    return out


def selection_distribution(A, selected, meter: CostMeter | None = None) -> np.ndarray:
    """Sampling probabilities for the next adaptive round.

    Uniform over non-zero columns when nothing is selected yet; otherwise
    proportional to each unselected column's relative residual. Returns the
    all-zero vector when every residual vanishes.
    """
    A = np.asarray(A, dtype=np.float64)
    norms = column_norms(A, meter)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        warnings.warn(f"{zero.size} zero-norm column(s) scored 0: {zero[:10].tolist()}", ZeroColumnWarning)
    selected = list(selected)
    if not selected:
        scores = (norms > 0).astype(np.float64)
    else:
        Q = orthonormal_basis(A[:, selected] / norms[selected], meter)
        scores = _relative_residuals(A, Q, norms, meter)
        scores[selected] = 0.0
    total = scores.sum()
    return scores / total if total > 0 else scores


class ColumnSelector:
    """Resumable adaptive column selection.

    :meth:`extend` runs rounds until every unselected column is within the
    requested tolerance or ``max_cols`` is reached. Calling it again with a
    smaller tolerance resumes from the current selection and RNG state, so a
    resumed run selects exactly what a fresh run with the smaller tolerance
    (and the same seed) would.
    """

    def __init__(self, A, cfg: CssdConfig, meter: CostMeter | None = None):
        self.A = as_dense(A)
        self.cfg = cfg
        self.meter = meter
        self.norms = column_norms(self.A, meter)
        if not np.any(self.norms > 0):
            raise DegenerateInputError("degenerate input: matrix is entirely zero")
        self.l_max = min(cfg.max_cols, self.A.shape[1])
        self.rng = np.random.default_rng(cfg.seed)
        self.selected: list[int] = []
        self.Q = np.zeros((self.A.shape[0], 0))
        self.residuals = np.where(self.norms > 0, 1.0, 0.0)
        self.rounds = 0
        zero = np.flatnonzero(self.norms == 0)
        self.warnings = tuple(f"column {i} has zero norm" for i in zero)

    @property
    def D(self) -> np.ndarray:
        return self.A[:, self.selected] / self.norms[self.selected]

    def _converged(self, delta_d: float) -> bool:
        tol = max(delta_d, EXACT_FLOOR)
        return bool(self.selected) and float(self.residuals.max(initial=0.0)) <= tol

    def _draw_round(self) -> None:
        if self.selected:
            scores = self.residuals.copy()
        else:
            scores = (self.norms > 0).astype(np.float64)
        scores[self.selected] = 0.0
        want = min(self.cfg.ls, self.l_max - len(self.selected))
        Qb = self.Q
        accepted = 0
        while accepted < want:
            total = scores.sum()
            if total <= 0:
                break
            cdf = np.cumsum(scores)
            idx = int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"))
            idx = min(idx, scores.size - 1)
            while scores[idx] == 0.0:  # guard against landing on a zero-width bin
                idx -= 1
            scores[idx] = 0.0
            d = self.A[:, idx] / self.norms[idx]
            r = d.copy()
            for _ in range(2):
                r -= Qb @ (Qb.T @ r)
            if self.meter is not None:
                self.meter.charge(4 * Qb.shape[0] * Qb.shape[1])
            rn = float(np.linalg.norm(r))
            if rn <= EXACT_FLOOR:
                continue  # already in the span of this round's picks
            Qb = np.column_stack([Qb, r / rn])
            self.selected.append(idx)
            accepted += 1

    def extend(self, delta_d: float) -> list[int]:
        while len(self.selected) < self.l_max and not self._converged(delta_d):
            before = len(self.selected)
            self._draw_round()
            self.rounds += 1
            if len(self.selected) == before:
                break
            self.Q = orthonormal_basis(self.D, self.meter)
            self.residuals = _relative_residuals(self.A, self.Q, self.norms, self.meter)
            self.residuals[self.selected] = 0.0
        return list(self.selected)


def select_columns(A, cfg: CssdConfig, meter: CostMeter | None = None) -> tuple[np.ndarray, list[int]]:
    """Step 1 alone: returns the unit-norm basis ``D`` and the chosen indices."""
    sel = ColumnSelector(A, cfg, meter)
    selected = sel.extend(cfg.delta_d)
    return sel.D, selected


# --------------------------------------------------------------------------
# Step 2: Batch-OMP
# --------------------------------------------------------------------------


@njit(cache=True)
def _cholesky_solve(L, k, rhs, out):
    # out = (L L^T)^{-1} rhs[:k]; returns multiplication count
    for s in range(k):
        acc = rhs[s]
        for q in range(s):
            acc -= L[s, q] * out[q]
        out[s] = acc / L[s, s]
    for s in range(k - 1, -1, -1):
        acc = out[s]
        for q in range(s + 1, k):
            acc -= L[q, s] * out[q]
        out[s] = acc / L[s, s]
    return k * (k + 1)


@njit(cache=True)
def _explicit_energy(A, D, c, I, gamma, k, r):
    m = A.shape[0]
    for i in range(m):
        r[i] = A[i, c]
    for s in range(k):
        g = gamma[s]
        col = I[s]
        for i in range(m):
            r[i] -= D[i, col] * g
    e = 0.0
    for i in range(m):
        e += r[i] * r[i]
    return e


@njit(cache=True)
def _prune(G, alpha0, c, I, k, gamma, energy, tol2):
    """Backward elimination: drop atoms while the residual stays within ``tol2``.

    Removing atom ``s`` from a least-squares fit raises the residual energy by
    ``gamma_s**2 / inv(G_II)[s, s]``.
    """
    ops = 0
    L = np.zeros((k, k))
    e_s = np.zeros(k)
    col = np.zeros(k)
    rhs = np.zeros(k)
    while k > 1 and energy < tol2:
        # Cholesky of G[I, I]
        for s in range(k):
            for q in range(s + 1):
                acc = G[I[s], I[q]]
                for p in range(q):
                    acc -= L[s, p] * L[q, p]
                if s == q:
                    if acc <= 0.0:
                        return k, energy, ops
                    L[s, s] = np.sqrt(acc)
                else:
                    L[s, q] = acc / L[q, q]
        ops += k * k * k // 6 + k * k
        for s in range(k):
            rhs[s] = alpha0[I[s], c]
        ops += _cholesky_solve(L, k, rhs, gamma)
        best = -1
        bcost = np.inf
        for s in range(k):
            for q in range(k):
                e_s[q] = 0.0
            e_s[s] = 1.0
            ops += _cholesky_solve(L, k, e_s, col)
            cost = gamma[s] * gamma[s] / col[s]
            if cost < bcost:
                bcost = cost
                best = s
        if best < 0 or energy + bcost > tol2:
            break
        for s in range(best, k - 1):
            I[s] = I[s + 1]
        k -= 1
        energy += bcost
    # final coefficients for the surviving support
    for s in range(k):
        for q in range(s + 1):
            acc = G[I[s], I[q]]
            for p in range(q):
                acc -= L[s, p] * L[q, p]
            if s == q:
                L[s, s] = np.sqrt(acc)
            else:
                L[s, q] = acc / L[q, q]
    for s in range(k):
        rhs[s] = alpha0[I[s], c]
    ops += k * k * k // 6 + _cholesky_solve(L, k, rhs, gamma)
    return k, energy, ops


@njit(cache=True)
def _batch_omp(A, D, G, alpha0, norms, cols, tol, kmax, prune, atoms, coefs, counts, resid, mults):
    m, l = D.shape
    L = np.zeros((kmax, kmax))
    gamma = np.zeros(kmax)
    w = np.zeros(kmax)
    alpha = np.zeros(l)
    beta = np.zeros(l)
    rhs = np.zeros(kmax)
    r = np.zeros(m)
    tol2_rel = tol * tol
    for t in range(cols.size):
        c = cols[t]
        anorm2 = norms[c] * norms[c]
        counts[t] = 0
        resid[t] = 0.0
        if anorm2 == 0.0:
            continue
        if tol >= 1.0:
            resid[t] = 1.0  # the empty code already meets the bound
            continue
        tol2 = tol2_rel * anorm2
        for j in range(l):
            alpha[j] = alpha0[j, c]
        used = np.zeros(l, dtype=np.bool_)
        I = atoms[t]
        k = 0
        energy = anorm2
        delta_prev = 0.0
        ops = 0
        while True:
            if energy <= tol2 or energy <= _RECURRENCE_RESOLUTION * anorm2:
                # the recurrence has lost its digits this deep; measure instead
                energy = _explicit_energy(A, D, c, I, gamma, k, r)
                ops += m * k + m
                if energy <= tol2:
                    break
            if k >= kmax:
                break
            best = -1
            bval = 0.0
            for j in range(l):
                if not used[j]:
                    v = abs(alpha[j])
                    if v > bval:
                        bval = v
                        best = j
            if best < 0 or bval <= 1e-14 * math.sqrt(anorm2):
                break
            used[best] = True
            # progressive Cholesky of G[I, I]
            if k == 0:
                L[0, 0] = 1.0
            else:
                for s in range(k):
                    acc = G[I[s], best]
                    for q in range(s):
                        acc -= L[s, q] * w[q]
                    w[s] = acc / L[s, s]
                ops += k * (k + 1) // 2
                dd = 1.0
                for s in range(k):
                    dd -= w[s] * w[s]
                ops += k
                if dd <= 1e-12:
                    continue  # atom numerically inside the active span
                for s in range(k):
                    L[k, s] = w[s]
                L[k, k] = math.sqrt(dd)
            I[k] = best
            k += 1
            for s in range(k):
                rhs[s] = alpha0[I[s], c]
            ops += _cholesky_solve(L, k, rhs, gamma)
            for j in range(l):
                acc = 0.0
                for s in range(k):
                    acc += G[j, I[s]] * gamma[s]
                beta[j] = acc
                alpha[j] = alpha0[j, c] - acc
            ops += l * k
            delta = 0.0
            for s in range(k):
                delta += gamma[s] * beta[I[s]]
            ops += k
            energy = energy - delta + delta_prev
            delta_prev = delta
        if prune and k > 1 and energy < tol2:
            k, energy, extra = _prune(G, alpha0, c, I, k, gamma, energy, tol2)
            ops += extra
        energy = _explicit_energy(A, D, c, I, gamma, k, r)
        ops += m * k + m
        counts[t] = k
        for s in range(k):
            coefs[t, s] = gamma[s]
        resid[t] = math.sqrt(max(energy, 0.0) / anorm2)
        mults[t] = ops


def _run_omp(A, D, norms, cols, tol, kmax, meter, prune=True):
    m, l = D.shape
    kmax = max(1, min(kmax, l))
    G = np.ascontiguousarray(D.T @ D)
    alpha0 = np.ascontiguousarray(D.T @ A[:, cols]) if cols.size else np.zeros((l, 0))
    # alpha0 was built for the subset; index it by position
    local = np.arange(cols.size, dtype=np.int64)
    sub_norms = norms[cols]
    atoms = np.zeros((cols.size, kmax), dtype=np.int64)
    coefs = np.zeros((cols.size, kmax))
    counts = np.zeros(cols.size, dtype=np.int64)
    resid = np.zeros(cols.size)
    mults = np.zeros(cols.size, dtype=np.int64)
    Asub = np.asfortranarray(A[:, cols]) if cols.size else np.zeros((m, 0), order="F")
    _batch_omp(Asub, np.asfortranarray(D), G, alpha0, sub_norms, local, float(tol), kmax,
               prune, atoms, coefs, counts, resid, mults)
    if meter is not None:
        meter.charge(l * l * m + l * m * cols.size + int(mults.sum()))
    return atoms, coefs, counts, resid


def omp_encode(D, a, delta_d: float, k_max: int | None = None, meter: CostMeter | None = None):
    """Code one column ``a`` against unit-norm ``D``.

    Returns ``(rows, values, relative_residual)``; rows are ascending. A zero
    ``a`` gives an empty column. The relative tolerance is floored at
    :data:`EXACT_FLOOR`.
    """
    D = np.asarray(D, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64).reshape(-1, 1)
    if a.shape[0] != D.shape[0]:
        raise ValueError(f"signal length {a.shape[0]} != dictionary rows {D.shape[0]}")
    kmax = D.shape[1] if k_max is None else k_max
    norms = column_norms(a)
    atoms, coefs, counts, resid = _run_omp(
        a, D, norms, np.array([0], dtype=np.int64), max(delta_d, EXACT_FLOOR), kmax, meter
    )
    k = counts[0]
    order = np.argsort(atoms[0, :k])
    return atoms[0, :k][order], coefs[0, :k][order], float(resid[0])


def encode_columns(
    A,
    selected,
    delta_d: float,
    k_max: int | None = None,
    meter: CostMeter | None = None,
    seed: int = 0,
    extra_warnings: tuple[str, ...] = (),
) -> Factorization:
    """Step 2 for all columns given a selection; selected columns get a single coefficient."""
    A = np.asarray(A, dtype=np.float64)
    m, n = A.shape
    selected = [int(s) for s in selected]
    norms = column_norms(A, meter)
    D = A[:, selected] / norms[selected]
    D = np.asfortranarray(D)
    D.setflags(write=False)
    l = len(selected)
    kmax = l if k_max is None else min(k_max, l)
    pos = {s: j for j, s in enumerate(selected)}
    rest = np.array([i for i in range(n) if i not in pos], dtype=np.int64)

    atoms, coefs, counts, resid = _run_omp(A, D, norms, rest, max(delta_d, EXACT_FLOOR), max(kmax, 1), meter)

    per_col_rows: list = [None] * n
    per_col_vals: list = [None] * n
    residuals = np.zeros(n)
    for t, c in enumerate(rest):
        k = counts[t]
        per_col_rows[c] = atoms[t, :k]
        per_col_vals[c] = coefs[t, :k]
        residuals[c] = resid[t]
    for s, j in pos.items():
        per_col_rows[s] = np.array([j])
        per_col_vals[s] = np.array([norms[s]])
        residuals[s] = np.linalg.norm(A[:, s] - D[:, j] * norms[s]) / norms[s]
    if meter is not None:
        meter.charge(2 * m * l)
    V = SparseColMatrix.from_columns(l, zip(per_col_rows, per_col_vals))
    return Factorization(
        D=D,
        V=V,
        selected=tuple(selected),
        delta_d=float(delta_d),
        residuals=residuals,
        seed=seed,
        warnings=tuple(extra_warnings),
    )


def decompose(A, cfg: CssdConfig, meter: CostMeter | None = None) -> Factorization:
    """Full decomposition: adaptive selection then Batch-OMP coding of every column."""
    A = as_dense(A)
    if cfg.max_cols > A.shape[1]:
        cfg = CssdConfig(cfg.delta_d, A.shape[1], min(cfg.ls, A.shape[1]), cfg.max_atoms_per_col, cfg.seed)
    sel = ColumnSelector(A, cfg, meter)
    selected = sel.extend(cfg.delta_d)
    return encode_columns(A, selected, cfg.delta_d, cfg.max_atoms_per_col, meter, cfg.seed, sel.warnings)
