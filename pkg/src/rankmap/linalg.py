"""Dense/sparse containers and the sequential kernels the rest of the package uses.

Dense matrices are plain ``float64`` numpy arrays in Fortran (column-major)
order; vectors are 1-D ``float64`` arrays. Both are returned read-only by the
constructors below. The sparse coefficient matrix has its own CSC container so
that kernels can walk stored entries in a fixed order.

Every kernel sums each output entry sequentially, in increasing index order,
starting from ``0.0``. No reassociation happens, so a chunked computation that
hands its running accumulator from one chunk to the next reproduces the
single-pass result bit for bit. ``tests/test_linalg.py`` checks this against a
pure-Python triple loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numba import njit

__all__ = [
    "CostMeter",
    "DimensionError",
    "IllConditionedError",
    "SparseColMatrix",
    "as_dense",
    "as_vector",
    "column_norms",
    "dense_matvec",
    "least_squares_project",
    "orthonormal_basis",
    "sparse_matvec",
]


class DimensionError(ValueError):
    """Operands do not conform."""


class IllConditionedError(np.linalg.LinAlgError):
    """Basis is numerically rank deficient."""

    def __init__(self, rank: int, cols: int):
        super().__init__(f"basis has numerical rank {rank} < {cols} columns")
        self.rank = rank
        self.cols = cols


@dataclass
class CostMeter:
    """Mutable operation tally owned by one caller (one worker, one solve...).

    Python ints never overflow, which covers the 64-bit counter requirement.
    """

    multiplications: int = 0
    additions: int = 0
    communicated_values: int = 0

    def charge(self, mults: int, adds: int | None = None) -> None:
        self.multiplications += int(mults)
        self.additions += int(mults if adds is None else adds)

    def absorb(self, other: "CostMeter") -> None:
        self.multiplications += other.multiplications
        self.additions += other.additions
        self.communicated_values += other.communicated_values

    def snapshot(self) -> dict:
        return {
            "multiplications": self.multiplications,
            "additions": self.additions,
            "communicated_values": self.communicated_values,
        }


def _charge(meter: CostMeter | None, mults: int, adds: int | None = None) -> None:
    if meter is not None:
        meter.charge(mults, adds)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def as_dense(a) -> np.ndarray:
    """Validate and return a read-only column-major float64 matrix.

    Inputs that already are read-only Fortran-ordered float64 arrays pass
    through without a copy.
    """
    if (
        isinstance(a, np.ndarray)
        and a.dtype == np.float64
        and a.ndim == 2
        and a.flags.f_contiguous
        and not a.flags.writeable
    ):
        return a
    arr = np.array(a, dtype=np.float64, order="F")
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains NaN or Inf")
    return _freeze(arr)


def as_vector(v) -> np.ndarray:
    arr = np.array(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains NaN or Inf")
    return arr


# --------------------------------------------------------------------------
# Sparse container
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseColMatrix:
    """Compressed sparse column matrix.

    Row indices are strictly increasing inside each column and stored values
    are non-zero. Construction validates both; use :meth:`from_dense` or
    :meth:`from_columns` rather than filling the arrays by hand.
    """

    shape: tuple[int, int]
    col_ptr: np.ndarray
    row_idx: np.ndarray
    values: np.ndarray
    _checked: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        rows, cols = self.shape
        col_ptr = np.ascontiguousarray(self.col_ptr, dtype=np.int64)
        row_idx = np.ascontiguousarray(self.row_idx, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "shape", (int(rows), int(cols)))
        object.__setattr__(self, "col_ptr", _freeze(col_ptr))
        object.__setattr__(self, "row_idx", _freeze(row_idx))
        object.__setattr__(self, "values", _freeze(values))
        if self._checked:
            self._validate()

    def _validate(self) -> None:
        rows, cols = self.shape
        cp, ri, vals = self.col_ptr, self.row_idx, self.values
        if rows < 0 or cols < 0:
            raise ValueError("negative dimension")
        if cp.shape != (cols + 1,):
            raise ValueError(f"col_ptr must have length {cols + 1}")
        if cp[0] != 0 or cp[-1] != ri.size or ri.size != vals.size:
            raise ValueError("col_ptr endpoints disagree with stored entries")
        if np.any(np.diff(cp) < 0):
            raise ValueError("col_ptr is decreasing")
        if ri.size:
            if ri.min() < 0 or ri.max() >= rows:
                raise ValueError("row index out of range")
            owner = np.repeat(np.arange(cols), np.diff(cp))
            same_col = owner[1:] == owner[:-1]
            if np.any(np.diff(ri)[same_col] <= 0):
                raise ValueError("row indices not strictly increasing within a column")
        if np.any(vals == 0.0):
            raise ValueError("explicit zeros are not allowed")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values contain NaN or Inf")

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_dense(cls, a) -> "SparseColMatrix":
        arr = np.asarray(a, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError("expected a 2-D matrix")
        mask = arr != 0.0
        col_ptr = np.zeros(arr.shape[1] + 1, dtype=np.int64)
        np.cumsum(mask.sum(axis=0), out=col_ptr[1:])
        rows, cols = np.nonzero(mask.T)  # column-major walk
        return cls(arr.shape, col_ptr, cols, arr[cols, rows])

    @classmethod
    def from_columns(cls, n_rows: int, columns) -> "SparseColMatrix":
        """Build from an iterable of ``(row_indices, values)`` pairs, one per column."""
        ptr = [0]
        rows_all, vals_all = [], []
        for rows, vals in columns:
            rows = np.asarray(rows, dtype=np.int64)
            vals = np.asarray(vals, dtype=np.float64)
            order = np.argsort(rows, kind="stable")
            keep = vals[order] != 0.0
            rows_all.append(rows[order][keep])
            vals_all.append(vals[order][keep])
            ptr.append(ptr[-1] + int(keep.sum()))
        ri = np.concatenate(rows_all) if rows_all else np.zeros(0, np.int64)
        vs = np.concatenate(vals_all) if vals_all else np.zeros(0)
        return cls((n_rows, len(ptr) - 1), np.array(ptr, dtype=np.int64), ri, vs)

    @classmethod
    def from_scipy(cls, m) -> "SparseColMatrix":
        csc = m.tocsc(copy=True)
        csc.eliminate_zeros()
        csc.sum_duplicates()
        csc.sort_indices()
        return cls(csc.shape, csc.indptr, csc.indices, csc.data)

    def to_scipy(self):
        import scipy.sparse

        return scipy.sparse.csc_matrix(
            (self.values.copy(), self.row_idx.copy(), self.col_ptr.copy()), shape=self.shape
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, order="F")
        for j in range(self.shape[1]):
            lo, hi = self.col_ptr[j], self.col_ptr[j + 1]
            out[self.row_idx[lo:hi], j] = self.values[lo:hi]
        return out

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.col_ptr[j], self.col_ptr[j + 1]
        return self.row_idx[lo:hi], self.values[lo:hi]

    def column_counts(self) -> np.ndarray:
        return np.diff(self.col_ptr)

    def column_block(self, start: int, stop: int) -> "SparseColMatrix":
        """Columns ``[start, stop)`` as a standalone matrix (same row space)."""
        lo, hi = self.col_ptr[start], self.col_ptr[stop]
        return SparseColMatrix(
            (self.shape[0], stop - start),
            self.col_ptr[start : stop + 1] - lo,
            self.row_idx[lo:hi],
            self.values[lo:hi],
            _checked=False,
        )

    def __eq__(self, other):
        if not isinstance(other, SparseColMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.col_ptr, other.col_ptr)
            and np.array_equal(self.row_idx, other.row_idx)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


# --------------------------------------------------------------------------
# Kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def _dense_axpy_columns(M, v, out):
    # out[i] += sum_j M[i, j] * v[j], j ascending; column-major friendly
    rows, cols = M.shape
    for j in range(cols):
        vj = v[j]
        for i in range(rows):
            out[i] += M[i, j] * vj


@njit(cache=True)
def _dense_dot_columns(M, v, out):
    rows, cols = M.shape
    for j in range(cols):
        acc = 0.0
        for i in range(rows):
            acc += M[i, j] * v[i]
        out[j] = acc


@njit(cache=True)
def _csc_axpy(col_ptr, row_idx, values, x, out):
    for j in range(col_ptr.size - 1):
        xj = x[j]
        for k in range(col_ptr[j], col_ptr[j + 1]):
            out[row_idx[k]] += values[k] * xj


@njit(cache=True)
def _csc_dot(col_ptr, row_idx, values, p, out):
    for j in range(col_ptr.size - 1):
        acc = 0.0
        for k in range(col_ptr[j], col_ptr[j + 1]):
            acc += values[k] * p[row_idx[k]]
        out[j] = acc


def dense_matvec(
    M: np.ndarray, v, transpose: bool = False, meter: CostMeter | None = None
) -> np.ndarray:
    """``M @ v`` (or ``M.T @ v``) with sequential per-entry summation."""
    M = np.asarray(M, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    rows, cols = M.shape
    if transpose:
        if v.shape != (rows,):
            raise DimensionError(f"M is {rows}x{cols}; transposed product needs len {rows}, got {v.shape}")
        out = np.empty(cols)
        _dense_dot_columns(np.asfortranarray(M), v, out)
    else:
        if v.shape != (cols,):
            raise DimensionError(f"M is {rows}x{cols}; product needs len {cols}, got {v.shape}")
        out = np.zeros(rows)
        _dense_axpy_columns(np.asfortranarray(M), v, out)
    _charge(meter, rows * cols)
    return out


def dense_matvec_accumulate(M: np.ndarray, v: np.ndarray, out: np.ndarray, meter: CostMeter | None = None) -> None:
    """``out += M @ v`` continuing ``out``'s running sums (chained reductions)."""
    _dense_axpy_columns(np.asfortranarray(M), np.ascontiguousarray(v, dtype=np.float64), out)
    _charge(meter, M.shape[0] * M.shape[1])


def sparse_matvec(
    V: SparseColMatrix, v, transpose: bool = False, meter: CostMeter | None = None
) -> np.ndarray:
    """``V @ v`` (or ``V.T @ v``) touching only stored entries; charges ``nnz`` mults."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    rows, cols = V.shape
    if transpose:
        if v.shape != (rows,):
            raise DimensionError(f"V is {rows}x{cols}; transposed product needs len {rows}, got {v.shape}")
        out = np.empty(cols)
        _csc_dot(V.col_ptr, V.row_idx, V.values, v, out)
    else:
        if v.shape != (cols,):
            raise DimensionError(f"V is {rows}x{cols}; product needs len {cols}, got {v.shape}")
        out = np.zeros(rows)
        _csc_axpy(V.col_ptr, V.row_idx, V.values, v, out)
    _charge(meter, V.nnz)
    return out


def sparse_matvec_accumulate(V: SparseColMatrix, x: np.ndarray, out: np.ndarray, meter: CostMeter | None = None) -> None:
    """``out += V @ x`` continuing ``out``'s running sums."""
    _csc_axpy(V.col_ptr, V.row_idx, V.values, np.ascontiguousarray(x, dtype=np.float64), out)
    _charge(meter, V.nnz)


def orthonormal_basis(basis: np.ndarray, meter: CostMeter | None = None) -> np.ndarray:
    """Orthonormal basis of ``range(basis)`` via QR with column pivoting.

    Raises :class:`IllConditionedError` when the numerical rank, judged with
    tolerance ``max(m, cols) * eps * |R[0, 0]|``, is below the column count.
    """
    B = np.asarray(basis, dtype=np.float64)
    m, k = B.shape
    if k == 0:
        return np.zeros((m, 0))
    Q, R, _ = scipy.linalg.qr(B, mode="economic", pivoting=True)
    _charge(meter, m * k * k)
    diag = np.abs(np.diag(R))
    tol = max(m, k) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < k:
        raise IllConditionedError(rank, k)
    return Q


def least_squares_project(basis, targets, meter: CostMeter | None = None) -> np.ndarray:
    """``basis @ pinv(basis) @ targets`` through an orthonormal factor, never normal equations."""
    B = np.asarray(basis, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    if T.ndim == 1:
        T = T[:, None]
    if B.shape[0] != T.shape[0]:
        raise DimensionError(f"basis has {B.shape[0]} rows, targets have {T.shape[0]}")
    Q = orthonormal_basis(B, meter)
    _charge(meter, 2 * Q.shape[0] * Q.shape[1] * T.shape[1])
    return Q @ (Q.T @ T)


def column_norms(M, meter: CostMeter | None = None) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    _charge(meter, M.size)
    return np.sqrt(np.einsum("ij,ij->j", M, M))
