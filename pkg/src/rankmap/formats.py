"""Matrix and factorization files.

``raw_f64``
    16-byte header: magic ``b"RMAP"``, ``u32`` rows, ``u32`` columns, ``u32``
    reserved (zero), all little-endian; then ``rows * cols`` little-endian
    float64 values in column-major order. Lossless.

Matrix Market
    Reading goes through :func:`scipy.io.mmread` (array and coordinate, both
    densified). Writing is done here so the output is byte-stable and every
    float is printed with ``repr`` (shortest string that round-trips).

Factorizations live in a directory: ``D.rmap``, ``V.mtx`` and
``factorization.json`` (selection, tolerance, seed, per-column residuals).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from .cssd import Factorization
from .linalg import SparseColMatrix, as_dense

__all__ = [
    "FormatError",
    "HEADER_SIZE",
    "MAGIC",
    "load_factorization",
    "load_matrix",
    "read_mtx",
    "read_raw",
    "save_factorization",
    "save_matrix",
    "write_mtx_coordinate",
    "write_mtx_dense",
    "write_raw",
]

MAGIC = b"RMAP"
HEADER_SIZE = 16
_HEADER = struct.Struct("<4sIII")
_U32_MAX = 2**32 - 1


class FormatError(ValueError):
    """Unparseable file; ``offset`` is the byte (or line, for text formats) where parsing failed."""

    def __init__(self, message: str, offset: int, path=None):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{message} (at byte {offset})")
        self.offset = offset
        self.path = path


def _infer_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".mtx", ".mm"):
        return "matrix_market"
    if suffix in (".rmap", ".f64", ".bin"):
        return "raw_f64"
    raise ValueError(f"cannot infer format from {path!r}; pass format= explicitly")


# --------------------------------------------------------------------------
# raw_f64
# --------------------------------------------------------------------------


def write_raw(path, A) -> None:
    A = as_dense(A)
    m, n = A.shape
    if m > _U32_MAX or n > _U32_MAX:
        raise ValueError("dimensions do not fit in u32")
    payload = np.asarray(A, dtype="<f8").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, m, n, 0))
        fh.write(payload)


def read_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise FormatError(f"truncated header: {len(data)} of {HEADER_SIZE} bytes", len(data), path)
    magic, m, n, reserved = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0, path)
    if reserved != 0:
        raise FormatError("reserved header field is not zero", 12, path)
    expected = HEADER_SIZE + 8 * m * n
    if m * n > (1 << 60):
        raise FormatError(f"dimension overflow: {m} x {n}", 4, path)
    if len(data) < expected:
        # first byte of the incomplete or missing value
        got = (len(data) - HEADER_SIZE) // 8
        raise FormatError(f"truncated data: {got} of {m * n} values", HEADER_SIZE + 8 * got, path)
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes", expected, path)
    arr = np.frombuffer(data, dtype="<f8", count=m * n, offset=HEADER_SIZE)
    return as_dense(arr.astype(np.float64).reshape((m, n), order="F"))


# --------------------------------------------------------------------------
# Matrix Market
# --------------------------------------------------------------------------


def write_mtx_dense(path, A) -> None:
    A = as_dense(A)
    m, n = A.shape
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{m} {n}\n")
        for v in A.ravel(order="F"):
            fh.write(f"{float(v)!r}\n")


def write_mtx_coordinate(path, V: SparseColMatrix) -> None:
    rows, cols = V.shape
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{rows} {cols} {V.nnz}\n")
        for j in range(cols):
            idx, vals = V.column(j)
            for i, v in zip(idx.tolist(), vals.tolist()):
                fh.write(f"{i + 1} {j + 1} {v!r}\n")


def read_mtx(path, sparse: bool = False):
    """Dense array (or :class:`SparseColMatrix` with ``sparse=True``)."""
    try:
        obj = scipy.io.mmread(str(path))
    except (ValueError, OSError, IndexError) as exc:
        raise FormatError(f"not a valid Matrix Market file: {exc}", 0, path) from exc
    if scipy.sparse.issparse(obj):
        return SparseColMatrix.from_scipy(obj) if sparse else as_dense(obj.toarray())
    arr = np.asarray(obj, dtype=np.float64)
    return SparseColMatrix.from_dense(arr) if sparse else as_dense(arr)


# --------------------------------------------------------------------------
# Dispatch
# --------------------------------------------------------------------------


def load_matrix(path, format: str | None = None) -> np.ndarray:
    fmt = format or _infer_format(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if fmt == "raw_f64":
        return read_raw(path)
    if fmt == "matrix_market":
        return read_mtx(path)
    raise ValueError(f"unknown format {fmt!r}")


def save_matrix(path, A, format: str | None = None) -> None:
    fmt = format or _infer_format(path)
    if fmt == "raw_f64":
        write_raw(path, A)
    elif fmt == "matrix_market":
        write_mtx_dense(path, A)
    else:
        raise ValueError(f"unknown format {fmt!r}")


# --------------------------------------------------------------------------
# Factorizations
# --------------------------------------------------------------------------


def save_factorization(directory, F: Factorization) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_raw(out / "D.rmap", F.D)
    write_mtx_coordinate(out / "V.mtx", F.V)
    meta = {
        "m": F.m,
        "l": F.l,
        "n": F.n,
        "nnz_V": F.nnz,
        "selected": list(F.selected),
        "delta_d": F.delta_d,
        "seed": F.seed,
        "residuals": [float(r) for r in F.residuals],
        "warnings": list(F.warnings),
    }
    (out / "factorization.json").write_text(json.dumps(meta, indent=1) + "\n")
    return out


def load_factorization(directory) -> Factorization:
    src = Path(directory)
    meta = json.loads((src / "factorization.json").read_text())
    D = read_raw(src / "D.rmap")
    V = read_mtx(src / "V.mtx", sparse=True)
    if V.shape[0] != D.shape[1]:
        # an all-zero trailing row would shrink nothing, but guard against hand edits
        raise FormatError(f"V has {V.shape[0]} rows but D has {D.shape[1]} columns", 0, src / "V.mtx")
    if (D.shape[0], V.shape[1]) != (meta["m"], meta["n"]):
        raise FormatError("factor shapes disagree with factorization.json", 0, src / "factorization.json")
    return Factorization(
        D=D,
        V=V,
        selected=tuple(meta["selected"]),
        delta_d=float(meta["delta_d"]),
        residuals=np.array(meta["residuals"], dtype=np.float64),
        seed=int(meta["seed"]),
        warnings=tuple(meta.get("warnings", ())),
    )
