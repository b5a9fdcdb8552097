"""Synthetic data with known structure."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .linalg import SparseColMatrix, as_dense

__all__ = [
    "KINDS",
    "DatasetSpec",
    "block_diagonal_factors",
    "block_diagonal_v",
    "generate",
    "low_rank",
    "union_of_subspaces",
]

KINDS = ("low_rank", "union_of_subspaces", "block_diagonal_v", "file")


@dataclass(frozen=True)
class DatasetSpec:
    """``rank`` is the rank for ``low_rank``, the subspace dimension for
    ``union_of_subspaces`` and the block height for ``block_diagonal_v``;
    ``subspaces`` is the number of subspaces or blocks."""

    kind: str
    m: int = 64
    n: int = 1000
    rank: int = 8
    subspaces: int = 1
    noise: float = 0.0
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "file":
            if not self.path:
                raise ValueError("kind='file' needs a path")
            return
        if min(self.m, self.n, self.rank, self.subspaces) < 1:
            raise ValueError("dimensions must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.rank >= self.m:
            raise ValueError(f"rank {self.rank} must be below m={self.m}")
        if self.kind == "block_diagonal_v" and self.rank * self.subspaces > self.m:
            raise ValueError("block_diagonal_v needs rank * subspaces <= m")

    def to_dict(self) -> dict:
        return asdict(self)


def _noise(rng, shape, level):
    return level * rng.standard_normal(shape) if level > 0 else 0.0


def low_rank(m: int, n: int, r: int, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """``U W`` with Gaussian ``U`` (m x r), ``W`` (r x n), plus ``noise`` times Gaussian."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
    return as_dense(A + _noise(rng, (m, n), noise))


def union_of_subspaces(
    m: int, n: int, K: int, r: int, noise: float = 0.0, seed: int = 0, return_labels: bool = False
):
    """Columns drawn from ``K`` random ``r``-dimensional subspaces (orthonormal bases)."""
    rng = np.random.default_rng(seed)
    bases = [np.linalg.qr(rng.standard_normal((m, r)))[0] for _ in range(K)]
    labels = rng.integers(0, K, n)
    A = np.empty((m, n), order="F")
    for j, k in enumerate(labels):
        A[:, j] = bases[k] @ rng.standard_normal(r)
    A = as_dense(A + _noise(rng, (m, n), noise))
    return (A, labels) if return_labels else A


def block_diagonal_factors(m: int, n: int, blocks: int, block_rows: int, seed: int = 0):
    """Orthonormal ``D`` (m x blocks*block_rows) and block-diagonal sparse ``V``.

    Column ranges of ``V`` follow the balanced contiguous split used by the
    worker partitioner, so the blocks line up with ``blocks`` workers.
    """
    rng = np.random.default_rng(seed)
    l = blocks * block_rows  # noqa: E741
    D = np.linalg.qr(rng.standard_normal((m, l)))[0]
    base, extra = divmod(n, blocks)
    cols = []
    for b in range(blocks):
        width = base + (1 if b < extra else 0)
        rows = np.arange(b * block_rows, (b + 1) * block_rows)
        for _ in range(width):
            vals = rng.standard_normal(block_rows)
            vals[vals == 0.0] = 1.0
            cols.append((rows, vals))
    return as_dense(D), SparseColMatrix.from_columns(l, cols)


def block_diagonal_v(m: int, n: int, blocks: int, block_rows: int, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    D, V = block_diagonal_factors(m, n, blocks, block_rows, seed)
    rng = np.random.default_rng([seed, 1])
    return as_dense(D @ V.to_dense() + _noise(rng, (m, n), noise))


def generate(spec: DatasetSpec) -> np.ndarray:
    if spec.kind == "low_rank":
        return low_rank(spec.m, spec.n, spec.rank, spec.noise, spec.seed)
    if spec.kind == "union_of_subspaces":
        return union_of_subspaces(spec.m, spec.n, spec.subspaces, spec.rank, spec.noise, spec.seed)
    if spec.kind == "block_diagonal_v":
        return block_diagonal_v(spec.m, spec.n, spec.subspaces, spec.rank, spec.noise, spec.seed)
    from .formats import load_matrix

    return load_matrix(spec.path)
