import math

import numpy as np
import pytest

from rankmap.cssd import CssdConfig, decompose
from rankmap.datasets import low_rank
from rankmap.solvers import SolverConfig
from rankmap.tuner import (
    TargetUnreachable,
    TuneConfig,
    eigenvalue_evaluator,
    fista_evaluator,
    halving_sequence,
    tune,
)


@pytest.fixture(scope="module")
def approx_rank10():
    return low_rank(48, 600, 10, noise=0.3, seed=5)


def test_halving_sequence_is_exact():
    seq = halving_sequence(0.4, 1e-3)
    assert seq == [0.4 / 2**k for k in range(len(seq))]
    assert seq[-1] >= 1e-3 > seq[-1] / 2
    assert halving_sequence(0.4, 1e-3, max_rounds=3) == [0.4, 0.2, 0.1]


def test_any_accuracy_returns_max_after_one_evaluation(approx_rank10):
    calls = []
    res = tune(approx_rank10, TuneConfig(math.inf, lambda F: calls.append(F) or 0.7, max_cols=48))
    assert res.delta_d == 0.4 and len(calls) == 1 and len(res.trace) == 1


def test_exact_low_rank_reaches_tiny_error():
    A = low_rank(30, 300, 4, seed=1)
    ev = eigenvalue_evaluator(A, 4, SolverConfig(tol=1e-10, max_iters=20000))
    res = tune(A, TuneConfig(1e-4, ev, max_cols=30))
    # the first round already spans the column space; what is left is coding slack
    assert all(r.l == 4 for r in res.trace)
    assert res.trace[-1].delta_l <= 1e-4
    exact = decompose(A, CssdConfig(0.0, 30, seed=0))
    assert ev(exact) < 1e-9


def test_trace_monotone_and_selection_grows(approx_rank10):
    ev = eigenvalue_evaluator(approx_rank10, 10)
    res = tune(approx_rank10, TuneConfig(0.005, ev, max_cols=48, seed=3))
    dls = [r.delta_l for r in res.trace]
    assert all(b <= a for a, b in zip(dls, dls[1:]))
    assert [r.delta_d for r in res.trace] == halving_sequence(0.4, 1e-3)[: len(res.trace)]
    for prev, cur in zip(res.trace, res.trace[1:]):
        assert set(prev.selected) <= set(cur.selected)
        assert cur.selected[: len(prev.selected)] == prev.selected
    assert res.trace[-1].delta_l <= 0.005
    assert all(r.delta_l > 0.005 for r in res.trace[:-1])
    assert res.factorization.achieved_delta <= res.delta_d


def test_resumed_rounds_match_fresh_decompositions(approx_rank10):
    ev = eigenvalue_evaluator(approx_rank10, 5)
    try:
        res = tune(approx_rank10, TuneConfig(1e-12, ev, max_cols=48, seed=7, max_rounds=3))
        trace = res.trace
    except TargetUnreachable as exc:
        trace = exc.trace
    for r in trace:
        fresh = decompose(approx_rank10, CssdConfig(r.delta_d, 48, seed=7))
        assert fresh.selected == r.selected and fresh.nnz == r.nnz


def test_unreachable_target_reports_best(approx_rank10):
    errs = iter([0.5, 0.3, 0.31] + [0.4] * 20)
    with pytest.raises(TargetUnreachable) as err:
        tune(approx_rank10, TuneConfig(0.01, lambda F: next(errs), max_cols=48))
    assert err.value.best == (0.2, 0.3)
    assert len(err.value.trace) == len(halving_sequence(0.4, 1e-3))


def test_parallel_flag_same_answer(approx_rank10):
    ev = eigenvalue_evaluator(approx_rank10, 5)
    seq = tune(approx_rank10, TuneConfig(0.05, ev, max_cols=48, seed=2))
    par = tune(approx_rank10, TuneConfig(0.05, ev, max_cols=48, seed=2, parallel=True))
    assert par.delta_d == seq.delta_d
    assert par.trace[: len(seq.trace)] == seq.trace


def test_fista_evaluator(approx_rank10):
    ev = fista_evaluator(approx_rank10, probes=4, seed=1)
    tight = decompose(approx_rank10, CssdConfig(0.001, 48, seed=0))
    loose = decompose(approx_rank10, CssdConfig(0.4, 48, seed=0))
    assert len(ev.probes) == 4
    assert ev(tight) < ev(loose)


@pytest.mark.parametrize(
    "kw",
    [dict(target_delta_l=0.0), dict(target_delta_l=0.1, delta_d_min=0.5),
     dict(target_delta_l=0.1, delta_d_max=1.0), dict(target_delta_l=0.1, max_rounds=0)],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TuneConfig(evaluate=lambda F: 0.0, **kw)
