import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import lasso_objective, prox_grad_reference, top_eigenvalues
from rankmap.cssd import CssdConfig, Factorization, decompose
from rankmap.datasets import low_rank
from rankmap.linalg import CostMeter, DimensionError, SparseColMatrix, as_dense
from rankmap.solvers import (
    COLLAPSED,
    ConvergenceError,
    DivergenceError,
    GramOperator,
    SolverConfig,
    classify,
    estimate_lipschitz,
    fista_objective,
    fista_solve,
    learning_error,
    power_method,
    psnr,
    soft_threshold,
)


def factored(D, V):
    D = as_dense(D)
    V = SparseColMatrix.from_dense(V)
    return Factorization(D, V, tuple(range(D.shape[1])), 0.0, np.zeros(V.shape[1]))


@pytest.fixture(scope="module")
def exact_pair():
    A = low_rank(40, 300, 6, seed=11)
    F = decompose(A, CssdConfig(delta_d=0.0, max_cols=40, seed=0))
    return A, F


# ---- Gram operator ---------------------------------------------------------


def test_identity_factored():
    G = GramOperator.factored(factored(np.eye(2), np.eye(2)))
    assert np.array_equal(G.apply([1.0, 2.0]), [1.0, 2.0])


def test_small_factored_vs_dense_oracle():
    V = np.array([[1.0, 1.0], [0.0, 1.0]])
    G = GramOperator.factored(factored(np.eye(2), V))
    assert np.array_equal(G.apply([1.0, 1.0]), [2.0, 3.0])
    assert np.array_equal(G.apply([1.0, 1.0]), V.T @ V @ [1.0, 1.0])


def test_factored_matches_full_on_probes(exact_pair, rng):
    A, F = exact_pair
    Gf, Gd = GramOperator.factored(F), GramOperator.full(A)
    for _ in range(100):
        x = rng.standard_normal(A.shape[1])
        ref = Gd.apply(x)
        assert np.linalg.norm(Gf.apply(x) - ref) / np.linalg.norm(ref) < 1e-9


def test_counter_formulas(exact_pair):
    A, F = exact_pair
    m, n = A.shape
    meter = CostMeter()
    GramOperator.factored(F).apply(np.ones(n), meter)
    assert meter.multiplications == 2 * (F.nnz + F.l * m)
    meter = CostMeter()
    GramOperator.full(A).apply(np.ones(n), meter)
    assert meter.multiplications == 2 * m * n
    meter = CostMeter()
    G = GramOperator.factored(F, flow=COLLAPSED)
    G.apply(np.ones(n), meter)
    assert meter.multiplications == G.mults_per_apply == 2 * F.nnz + F.l**2


def test_collapsed_flow_agrees(exact_pair, rng):
    _, F = exact_pair
    x = rng.standard_normal(F.n)
    a = GramOperator.factored(F).apply(x)
    b = GramOperator.factored(F, flow=COLLAPSED).apply(x)
    assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(a)


def test_operator_dimension_check(exact_pair):
    with pytest.raises(DimensionError):
        GramOperator.factored(exact_pair[1]).apply(np.ones(3))


# ---- soft threshold --------------------------------------------------------


def test_soft_threshold_cases():
    assert soft_threshold([3.0], 1.0).tolist() == [2.0]
    assert soft_threshold([-0.5], 1.0).tolist() == [0.0]
    v = np.array([-2.0, 0.3, 5.0])
    assert np.array_equal(soft_threshold(v, 0.0), v)
    with pytest.raises(ValueError):
        soft_threshold(v, -1.0)


# ---- FISTA -----------------------------------------------------------------


def test_fista_identity_gram():
    aty = np.array([1.5, -2.0, 0.25])
    x, trace = fista_solve(GramOperator.full(np.eye(3)), aty, SolverConfig(step_size=1.0, lam=0.0))
    assert np.array_equal(x, aty) and len(trace) <= 2 and trace.converged


def test_fista_zero_data(rng):
    A = rng.standard_normal((5, 7))
    x, _ = fista_solve(GramOperator.full(A), np.zeros(7), SolverConfig(lam=0.1))
    assert not x.any()


def test_fista_matches_long_prox_gradient():
    rng = np.random.default_rng(21)
    A, y = rng.standard_normal((8, 12)), rng.standard_normal(8)
    G = GramOperator.full(A)
    x, _ = fista_solve(G, G.correlate(y), SolverConfig(lam=0.1, max_iters=20000, tol=1e-14))
    ref = prox_grad_reference(A, y, 0.1)
    assert abs(lasso_objective(A, y, x, 0.1) - lasso_objective(A, y, ref, 0.1)) < 1e-6


def test_fista_orthonormal_least_squares():
    rng = np.random.default_rng(2)
    Q = np.linalg.qr(rng.standard_normal((9, 9)))[0]
    y = rng.standard_normal(9)
    G = GramOperator.full(Q)
    x, _ = fista_solve(G, G.correlate(y), SolverConfig(lam=0.0, max_iters=200, tol=1e-15))
    assert np.abs(x - Q.T @ y).max() < 1e-10


@given(st.integers(0, 2**32 - 1))
def test_ist_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    A, y = rng.standard_normal((6, 9)), rng.standard_normal(6)
    G = GramOperator.full(A)
    step = 1.0 / np.linalg.norm(A, 2) ** 2
    _, trace = fista_solve(G, G.correlate(y), SolverConfig(step_size=step, lam=0.2, momentum=False, max_iters=60, tol=0))
    obj = np.array(trace.objective)
    assert np.all(np.diff(obj) <= 1e-12 * (1 + np.abs(obj[:-1])))


def test_fista_objective_is_lasso_minus_constant(rng):
    A, y, x = rng.standard_normal((5, 4)), rng.standard_normal(5), rng.standard_normal(4)
    G = GramOperator.full(A)
    val = fista_objective(x, G.apply(x), G.correlate(y), 0.3)
    assert math.isclose(val + 0.5 * y @ y, lasso_objective(A, y, x, 0.3), rel_tol=1e-12)


def test_fista_divergence_reports_step():
    G = GramOperator.full(np.diag([1e200, 1.0]))
    with pytest.raises(DivergenceError) as err:
        fista_solve(G, np.array([1.0, 1.0]), SolverConfig(step_size=10.0, max_iters=50))
    assert err.value.step_size == 10.0 and err.value.iteration >= 1


def test_fista_stop_rule_hook(rng):
    A, y = rng.standard_normal((6, 10)), rng.standard_normal(6)
    G = GramOperator.full(A)
    _, trace = fista_solve(G, G.correlate(y), SolverConfig(lam=0.01), stop_when=lambda x: True)
    assert len(trace) == 1


def test_trace_carries_costs(rng):
    A, y = rng.standard_normal((6, 10)), rng.standard_normal(6)
    G, meter = GramOperator.full(A), CostMeter()
    _, trace = fista_solve(G, G.correlate(y), SolverConfig(step_size=0.01, lam=0.1, max_iters=5, tol=0), meter)
    mults = [c["multiplications"] for c in trace.rows()]
    assert np.all(np.diff(mults) == 2 * 6 * 10)


def test_lipschitz_estimate_bounds_top_eigenvalue(rng):
    A = rng.standard_normal((10, 20))
    lip = estimate_lipschitz(GramOperator.full(A), 50)
    assert lip >= np.linalg.norm(A, 2) ** 2 * (1 - 1e-9)


# ---- power method ----------------------------------------------------------


def test_power_diagonal():
    vals, vecs = power_method(GramOperator.full(np.diag([2.0, 1.0])), 2, SolverConfig(tol=1e-12, max_iters=2000))
    assert np.allclose(vals, [4.0, 1.0], rtol=1e-10)
    assert np.allclose(np.abs(vecs), np.eye(2), atol=1e-6)


def test_power_zero_eigs(rng):
    vals, vecs = power_method(GramOperator.full(rng.standard_normal((3, 4))), 0, SolverConfig())
    assert vals.size == 0 and vecs.shape == (4, 0)


def test_power_full_matches_dense_oracle():
    A = low_rank(60, 400, 30, noise=0.1, seed=4)
    cfg = SolverConfig(tol=1e-9, max_iters=20000)
    G = GramOperator.full(A)
    vals, vecs = power_method(G, 10, cfg)
    ref = top_eigenvalues(A, 10)
    assert np.all(np.abs(vals - ref) / ref < 1e-6)
    for s, v in zip(vals, vecs.T):
        assert np.linalg.norm(G.apply(v) - s * v) / s <= 1e-6
    assert np.abs(vecs.T @ vecs - np.eye(10)).max() < 1e-8


def test_power_factored_matches_full(exact_pair):
    A, F = exact_pair
    cfg = SolverConfig(tol=1e-9, max_iters=20000)
    full, _ = power_method(GramOperator.full(A), 6, cfg)
    fac, _ = power_method(GramOperator.factored(F), 6, cfg)
    assert np.all(np.abs(fac - full) / full < 1e-6)


def test_power_nonconvergence_keeps_prefix():
    A = np.diag([3.0, 1.0, 1.0 - 1e-9])
    with pytest.raises(ConvergenceError) as err:
        power_method(GramOperator.full(A), 3, SolverConfig(tol=1e-14, max_iters=300))
    assert err.value.failed_index >= 1
    assert np.isclose(err.value.eigenvalues[0], 9.0)


# ---- metrics ---------------------------------------------------------------


def test_learning_error_cases():
    assert learning_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert math.isclose(learning_error([1.0, 0.0], [0.0, 1.0]), math.sqrt(2))
    with pytest.raises(ValueError):
        learning_error([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(DimensionError):
        learning_error([1.0], [1.0, 2.0])


@pytest.mark.parametrize("max_value,mse,db", [(1.0, 1.0, 0.0), (1.0, 1e-4, 20.0), (2.0, 4.0, 0.0)])
def test_psnr_cases(max_value, mse, db):
    y = np.zeros(4)
    yh = np.full(4, math.sqrt(mse))
    assert math.isclose(psnr(y, yh, max_value), db, abs_tol=1e-12)


def test_psnr_exact_is_infinite():
    assert psnr([1.0, 2.0], [1.0, 2.0], 1.0) == math.inf


def test_classify_cases():
    c = classify([0.5, 0.1, 0.05], [1, 1, 2])
    assert c.label == 1 and math.isclose(c.scores[1], 0.6) and c.scores[2] == 0.05
    z = classify([0.0, 0.0, 0.0], [3, 1, 2])
    assert z.label == 1 and z.no_support
    with pytest.raises(ValueError):
        classify([], [])


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_classify_symmetries(seed, scale):
    rng = np.random.default_rng(seed)
    x, labels = rng.standard_normal(12), rng.integers(0, 3, 12)
    base = classify(x, labels)
    assert classify(scale * x, labels).label == base.label
    perm = np.arange(12)
    for c in set(labels.tolist()):
        idx = np.flatnonzero(labels == c)
        perm[idx] = rng.permutation(idx)
    permuted = classify(x[perm], labels)
    for c, s in base.scores.items():
        assert math.isclose(permuted.scores[c], s, rel_tol=1e-12)
