import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import best_support
from rankmap.cssd import (
    ColumnSelector,
    CssdConfig,
    DegenerateInputError,
    ZeroColumnWarning,
    decompose,
    omp_encode,
    select_columns,
    selection_distribution,
)
from rankmap.datasets import low_rank, union_of_subspaces
from rankmap.linalg import CostMeter


def e(i, m=3):
    v = np.zeros(m)
    v[i] = 1.0
    return v


# ---- sampling distribution -------------------------------------------------


def test_distribution_after_first_pick():
    A = np.column_stack([e(0), e(0), e(1)])
    assert np.allclose(selection_distribution(A, [0]), [0, 0, 1])


def test_distribution_all_selected_is_zero(rng):
    A = rng.standard_normal((4, 3))
    assert np.array_equal(selection_distribution(A, [0, 1, 2]), np.zeros(3))


def test_distribution_uniform_start(rng):
    assert np.array_equal(selection_distribution(rng.standard_normal((3, 4)), []), np.full(4, 0.25))


def test_distribution_zero_column_scores_zero():
    A = np.column_stack([e(0), np.zeros(3), e(1)])
    with pytest.warns(ZeroColumnWarning):
        p = selection_distribution(A, [])
    assert p[1] == 0 and np.isclose(p.sum(), 1)


@given(st.integers(0, 2**32 - 1), st.integers(0, 5))
def test_distribution_is_probability(seed, k):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 8))
    p = selection_distribution(A, list(rng.choice(8, k, replace=False)))
    assert np.all(p >= 0)
    assert np.isclose(p.sum(), 1.0) or not p.any()


# ---- column selection ------------------------------------------------------


def test_rank_one_selects_one_column(rng):
    u = rng.standard_normal(10)
    A = np.outer(u, rng.uniform(0.5, 2.0, 30))
    D, sel = select_columns(A, CssdConfig(delta_d=0, max_cols=10, batch_size=1))
    assert len(sel) == 1 and D.shape == (10, 1)


def test_exact_rank_five():
    A = low_rank(20, 100, 5, seed=3)
    assert np.linalg.svd(A, compute_uv=False)[5] < 1e-10 * np.linalg.svd(A, compute_uv=False)[0]
    sel = ColumnSelector(A, CssdConfig(delta_d=0, max_cols=20, seed=2))
    chosen = sel.extend(0.0)
    assert len(chosen) == 5
    assert sel.residuals.max() < 1e-10


def test_loose_tolerance_stops_after_first_batch(rng):
    A = rng.standard_normal((5, 40)) + 10.0  # columns nearly parallel
    sel = ColumnSelector(A, CssdConfig(delta_d=0.99, max_cols=20, batch_size=3))
    assert len(sel.extend(0.99)) == 3 and sel.rounds == 1


def test_zero_matrix_is_degenerate():
    with pytest.raises(DegenerateInputError, match="degenerate"):
        decompose(np.zeros((4, 5)), CssdConfig())


def test_resumed_selection_equals_fresh_run():
    A = low_rank(30, 400, 12, noise=0.05, seed=1)
    cfg = CssdConfig(delta_d=0.4, max_cols=40, seed=5)
    sel = ColumnSelector(A, cfg)
    first = list(sel.extend(0.4))
    resumed = sel.extend(0.1)
    fresh = ColumnSelector(A, CssdConfig(delta_d=0.1, max_cols=40, seed=5)).extend(0.1)
    assert resumed[: len(first)] == first
    assert resumed == fresh


@pytest.mark.parametrize("kw", [dict(delta_d=1.0), dict(delta_d=-0.1), dict(max_cols=0), dict(batch_size=100)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CssdConfig(**kw)


# ---- Batch-OMP -------------------------------------------------------------


def test_omp_single_atom():
    rows, vals, res = omp_encode(np.column_stack([e(0, 2), e(1, 2)]), e(0, 2), 0.0)
    assert rows.tolist() == [0] and vals.tolist() == [1.0] and res == 0.0


def test_omp_two_atoms_match_exhaustive_search():
    D = np.column_stack([e(0, 2), e(1, 2)])
    a = np.array([0.6, 0.8])
    rows, vals, _ = omp_encode(D, a, 0.0)
    r, S, coef = best_support(D, a, 2)
    assert rows.tolist() == list(S) == [0, 1]
    assert np.allclose(vals, coef) and np.allclose(vals, [0.6, 0.8])


def test_omp_vacuous_tolerance_gives_empty_column(rng):
    rows, vals, res = omp_encode(rng.standard_normal((4, 3)), rng.standard_normal(4), 1.0)
    assert rows.size == 0 and res == 1.0


def test_omp_zero_signal(rng):
    rows, _, res = omp_encode(rng.standard_normal((4, 3)), np.zeros(4), 0.1)
    assert rows.size == 0 and res == 0.0


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.1, 0.3, 0.6]))
def test_omp_minimal_support_on_orthonormal_dictionary(seed, delta):
    rng = np.random.default_rng(seed)
    D = np.linalg.qr(rng.standard_normal((8, 5)))[0]
    inside = D @ rng.standard_normal(5)
    outside = rng.standard_normal(8)
    outside -= D @ (D.T @ outside)
    # a little energy outside span(D) unless the tolerance is exact
    a = inside + (0.0 if delta == 0.0 else 0.05) * np.linalg.norm(inside) * outside / np.linalg.norm(outside)
    rows, vals, res = omp_encode(D, a, delta)
    # smallest support reaching the tolerance, by exhaustive search
    target = delta * np.linalg.norm(a) + 1e-12 * np.linalg.norm(a)
    k_min = next(k for k in range(6) if best_support(D, a, k)[0] <= target)
    assert res <= max(delta, 1e-10) + 1e-12
    assert rows.size == k_min


@given(st.integers(0, 2**32 - 1))
def test_omp_residual_reported_truthfully(seed):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((10, 7))
    D /= np.linalg.norm(D, axis=0)
    a = rng.standard_normal(10)
    rows, vals, res = omp_encode(D, a, 0.2)
    true = np.linalg.norm(a - D[:, rows] @ vals) / np.linalg.norm(a)
    assert abs(true - res) < 1e-12
    floor = np.linalg.norm(a - D @ np.linalg.lstsq(D, a, rcond=None)[0]) / np.linalg.norm(a)
    assert res <= max(0.2, floor) + 1e-12


# ---- full decomposition ----------------------------------------------------


def test_union_of_three_subspaces_sparsity():
    A = union_of_subspaces(32, 300, K=3, r=4, seed=4)
    F = decompose(A, CssdConfig(delta_d=0.0, max_cols=32, seed=1))
    assert F.V.column_counts().max() <= 4
    assert np.linalg.norm(A - F.reconstruct()) / np.linalg.norm(A) < 1e-9


@pytest.mark.parametrize("delta", [0.0, 0.3, 0.9])
def test_rank_one_any_tolerance(rng, delta):
    A = np.outer(rng.standard_normal(8), rng.uniform(0.5, 2.0, 50))
    F = decompose(A, CssdConfig(delta_d=delta, max_cols=8, seed=0))
    assert F.l == 1 and F.nnz == 50


def test_approximately_low_rank():
    A = low_rank(50, 500, 10, noise=1e-3, seed=8)
    F = decompose(A, CssdConfig(delta_d=0.1, max_cols=50, seed=0))
    assert F.success and F.achieved_delta <= 0.1
    # spectral oracle: the tail beyond rank 10 carries well under 0.1 of the energy
    s = np.linalg.svd(A, compute_uv=False)
    assert np.sqrt(np.sum(s[10:] ** 2) / np.sum(s**2)) < 0.01
    assert F.l <= 20


def test_factorization_invariants():
    A = low_rank(30, 300, 6, noise=0.05, seed=2)
    F = decompose(A, CssdConfig(delta_d=0.2, max_cols=30, seed=3))
    assert np.allclose(np.linalg.norm(F.D, axis=0), 1.0, atol=1e-10)
    assert len(set(F.selected)) == F.l and all(0 <= s < 300 for s in F.selected)
    assert np.allclose(F.D, A[:, list(F.selected)] / np.linalg.norm(A[:, list(F.selected)], axis=0))
    assert F.success
    err = np.linalg.norm(A - F.reconstruct(), axis=0)
    assert np.all(err <= 0.2 * np.linalg.norm(A, axis=0) + 1e-12)
    assert F.density == F.nnz / (30 * 300)


def test_decompose_is_deterministic():
    A = low_rank(20, 200, 5, noise=0.1, seed=9)
    cfg = CssdConfig(delta_d=0.15, max_cols=20, seed=4)
    F1, F2 = decompose(A, cfg), decompose(A, cfg)
    assert F1.selected == F2.selected and F1.V == F2.V and np.array_equal(F1.D, F2.D)


def test_monotone_compaction_small():
    A = low_rank(40, 800, 8, noise=0.02, seed=6)
    nnz = [decompose(A, CssdConfig(delta_d=d, max_cols=40, seed=1)).nnz for d in (0.4, 0.2, 0.1, 0.05, 0.001)]
    assert all(a <= b for a, b in zip(nnz, nnz[1:]))


def test_cost_grows_linearly_in_n():
    ns = np.array([1000, 2000, 4000])
    counts = []
    for n in ns:
        A = low_rank(32, int(n), 6, seed=0)
        meter = CostMeter()
        F = decompose(A, CssdConfig(delta_d=0.0, max_cols=12, batch_size=6, seed=0), meter)
        assert F.l == 6
        counts.append(meter.multiplications)
    counts = np.array(counts, dtype=float)
    slope, icept = np.polyfit(ns, counts, 1)
    pred = slope * ns + icept
    r2 = 1 - np.sum((counts - pred) ** 2) / np.sum((counts - counts.mean()) ** 2)
    assert r2 >= 0.99


def test_zero_column_is_carried_with_warning(rng):
    A = rng.standard_normal((6, 10))
    A[:, 3] = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        F = decompose(A, CssdConfig(delta_d=0.0, max_cols=10, seed=0))
    assert F.V.column_counts()[3] == 0 and F.warnings
