"""``rankmap`` command line.

Exit codes: 0 success, 1 usage error, 2 runtime error. ``--seed`` falls back
to the ``RANKMAP_SEED`` environment variable, then to 0. Report files are
byte-identical across reruns with the same flags; timings go to a separate
``*.meta.json`` file.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bench
from .cssd import CssdConfig, decompose
from .datasets import KINDS, DatasetSpec, generate
from .distexec import (
    compare_models,
    fista_workload,
    plan_graph_partition,
    plan_matrix_partition,
    power_workload,
    run_distributed,
)
from .formats import load_factorization, load_matrix, save_factorization, save_matrix
from .linalg import CostMeter
from .solvers import GramOperator, SolverConfig, fista_solve, power_method
from .tuner import TargetUnreachable, TuneConfig, eigenvalue_evaluator, fista_evaluator, tune

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RANKMAP_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"RANKMAP_SEED must be an integer, got {env!r}") from None


def _meta(path: Path, **fields) -> None:
    bench.write_json(path.with_name(path.stem + ".meta.json"), fields)


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: $RANKMAP_SEED or 0)")
    p.add_argument("--workers", type=int, default=1, help="simulated worker count n_c")
    p.add_argument("--model", choices=("matrix", "graph", "full"), default=None,
                   help="run Gram applications on the simulated cluster with this model")


def _add_cssd(p):
    p.add_argument("--delta-d", type=float, default=0.1)
    p.add_argument("--max-cols", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-atoms", type=int, default=None)


def _add_solver(p):
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--num-eigs", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rankmap", description="Sparse column-selection factorization for Gram-operator workloads.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic matrix")
    g.add_argument("--kind", choices=[k for k in KINDS if k != "file"], required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--rank", type=int, default=8)
    g.add_argument("--subspaces", type=int, default=1)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--format", choices=("raw_f64", "matrix_market"), default=None)
    g.add_argument("-o", "--output", required=True)

    d = sub.add_parser("decompose", help="factor a matrix file")
    d.add_argument("input")
    _add_cssd(d)
    _add_common(d)
    d.add_argument("-o", "--output", required=True, help="directory for D.rmap, V.mtx and reports")

    s = sub.add_parser("solve", help="run FISTA or the power method")
    s.add_argument("solver", choices=("fista", "power"))
    s.add_argument("--factors", help="factorization directory")
    s.add_argument("--matrix", help="data matrix (needed for --full, --model full, or as the FISTA dictionary)")
    s.add_argument("--full", action="store_true", help="use the exact Gram operator of --matrix")
    s.add_argument("--signal", help="observation y (m x 1 matrix file) for FISTA")
    _add_solver(s)
    _add_common(s)
    s.add_argument("-o", "--output", required=True)

    t = sub.add_parser("tune", help="choose delta_d for a learning-error target")
    t.add_argument("input")
    t.add_argument("--target", type=float, required=True)
    t.add_argument("--evaluator", choices=("eigs", "fista"), default="eigs")
    t.add_argument("--num-eigs", type=int, default=10)
    t.add_argument("--probes", type=int, default=10)
    t.add_argument("--lam", type=float, default=0.1)
    t.add_argument("--delta-d-max", type=float, default=0.4)
    t.add_argument("--delta-d-min", type=float, default=1e-3)
    t.add_argument("--max-rounds", type=int, default=None)
    t.add_argument("--max-cols", type=int, default=64)
    t.add_argument("--parallel", action="store_true")
    t.add_argument("--save-factors", default=None)
    _add_common(t)
    t.add_argument("-o", "--output", required=True)

    b = sub.add_parser("bench", help="benchmark sweeps")
    bsub = b.add_subparsers(dest="bench", required=True, parser_class=_Parser)
    bs = bsub.add_parser("sweep", help="nnz(V) and eigenvalue error across delta_d")
    bs.add_argument("input")
    bs.add_argument("--deltas", type=_floats, default=list(bench.DEFAULT_SWEEP))
    bs.add_argument("--num-eigs", type=int, default=20)
    bs.add_argument("--max-cols", type=int, default=128)
    bs.add_argument("--seed", type=int, default=None)
    bs.add_argument("-o", "--output", required=True)
    bm = bsub.add_parser("models", help="matrix vs graph vs full on the simulated cluster")
    bm.add_argument("input", help="matrix file, or a factorization directory")
    bm.add_argument("--workers-list", type=_ints, default=[1, 2, 4, 8])
    bm.add_argument("--workload", choices=("power", "fista"), default="power")
    bm.add_argument("--iters", type=int, default=20)
    bm.add_argument("--models", default="matrix,graph,full")
    _add_cssd(bm)
    bm.add_argument("--seed", type=int, default=None)
    bm.add_argument("-o", "--output", required=True)
    bmem = bsub.add_parser("memory", help="stored entries: original vs least squares vs sparse codes")
    bmem.add_argument("input")
    _add_cssd(bmem)
    bmem.add_argument("--seed", type=int, default=None)
    bmem.add_argument("-o", "--output", required=True)
    return ap


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _cssd_config(args, seed, n) -> CssdConfig:
    return CssdConfig(args.delta_d, min(args.max_cols, n), args.batch_size, args.max_atoms, seed)


def cmd_gen(args) -> None:
    spec = DatasetSpec(args.kind, args.m, args.n, args.rank, args.subspaces, args.noise, _seed(args))
    save_matrix(args.output, generate(spec), args.format)


def cmd_decompose(args) -> None:
    seed = _seed(args)
    A = load_matrix(args.input)
    cfg = _cssd_config(args, seed, A.shape[1])
    meter = CostMeter()
    t0 = time.perf_counter()
    F = decompose(A, cfg, meter)
    wall = time.perf_counter() - t0
    out = save_factorization(args.output, F)
    report = bench.RunReport(
        config={"command": "decompose", "input": str(args.input), "delta_d": cfg.delta_d,
                "max_cols": cfg.max_cols, "batch_size": cfg.ls, "max_atoms": cfg.max_atoms_per_col,
                "seed": seed, "workers": args.workers},
        factorization=F.summary(),
        costs=[{"stage": "decompose", **meter.snapshot()}],
        metrics={"relative_frobenius_error": float(np.linalg.norm(A - F.reconstruct()) / np.linalg.norm(A))},
    )
    bench.write_json(out / "report.json", report.to_json())
    _meta(out / "report.json", wall_time_s=wall)
    print(f"l={F.l} nnz(V)={F.nnz} density={F.density:.6g} achieved_delta={F.achieved_delta:.3g}")


def _operator(args):
    if args.full or args.model == "full":
        if not args.matrix:
            raise UsageError("--full / --model full need --matrix")
        return GramOperator.full(load_matrix(args.matrix)), None
    if not args.factors:
        raise UsageError("give --factors (or --full with --matrix)")
    F = load_factorization(args.factors)
    return GramOperator.factored(F), F


def _signal(args, G, F, seed):
    if args.signal:
        y = load_matrix(args.signal).reshape(-1)
    else:
        y = np.random.default_rng(seed).standard_normal(G.m)
    if y.size != G.m:
        raise ValueError(f"signal has length {y.size}, operator expects {G.m}")
    # FISTA's offset uses the data matrix when available so full and factored runs share it
    if args.matrix:
        return GramOperator.full(load_matrix(args.matrix)).correlate(y)
    return G.correlate(y)


def cmd_solve(args) -> None:
    seed = _seed(args)
    G, F = _operator(args)
    defaults = (500, 1e-8) if args.solver == "fista" else (5000, 1e-7)
    cfg = SolverConfig(
        lam=args.lam if args.solver == "fista" else 0.0,
        max_iters=args.max_iters if args.max_iters is not None else defaults[0],
        tol=args.tol if args.tol is not None else defaults[1],
        seed=seed,
    )
    if args.solver == "fista":
        aty = _signal(args, G, F, seed)
        workload = fista_workload(aty, cfg)
    else:
        workload = power_workload(args.num_eigs, cfg)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    costs, trace_rows = [], []
    t0 = time.perf_counter()
    if args.model is not None:
        if args.model == "graph":
            plan = plan_graph_partition(G.factorization.V, args.workers)
        else:
            plan = plan_matrix_partition(G.n, args.workers)
        result, rep = run_distributed(plan, G, workload)
        costs.append(rep.to_json(include_wall_time=False))
    else:
        meter = CostMeter()
        if args.solver == "fista":
            result, trace = fista_solve(G, aty, cfg, meter)
            trace_rows = trace.rows()
        else:
            result, _ = power_method(G, args.num_eigs, cfg, meter)
        costs.append({"model": "serial", **meter.snapshot()})
    wall = time.perf_counter() - t0

    name = "solution.rmap" if args.solver == "fista" else "eigenvalues.rmap"
    save_matrix(out / name, np.asarray(result, dtype=np.float64).reshape(-1, 1))
    if trace_rows:
        bench.write_csv(out / "trace.csv", trace_rows)
    report = bench.RunReport(
        config={"command": "solve", "solver": args.solver, "full": bool(args.full), "model": args.model,
                "workers": args.workers, "lam": cfg.lam, "max_iters": cfg.max_iters, "tol": cfg.tol,
                "num_eigs": args.num_eigs, "seed": seed},
        factorization=F.summary() if F is not None else None,
        costs=costs,
        traces={"iterations": len(trace_rows)},
    )
    bench.write_json(out / "report.json", report.to_json())
    _meta(out / "report.json", wall_time_s=wall)


def cmd_tune(args) -> None:
    seed = _seed(args)
    A = load_matrix(args.input)
    if args.evaluator == "eigs":
        evaluate = eigenvalue_evaluator(A, min(args.num_eigs, A.shape[1]))
    else:
        evaluate = fista_evaluator(A, probes=args.probes, lam=args.lam, seed=seed)
    cfg = TuneConfig(
        target_delta_l=args.target,
        evaluate=evaluate,
        delta_d_max=args.delta_d_max,
        delta_d_min=args.delta_d_min,
        max_rounds=args.max_rounds,
        max_cols=min(args.max_cols, A.shape[1]),
        seed=seed,
        parallel=args.parallel,
    )
    t0 = time.perf_counter()
    try:
        res = tune(A, cfg)
        body = {"status": "ok", "delta_d": res.delta_d, "factorization": res.factorization.summary()}
        trace = res.trace
    except TargetUnreachable as exc:
        body = {"status": "unreachable", "best_delta_d": exc.best[0], "best_delta_l": exc.best[1]}
        trace, res = exc.trace, None
    body["target_delta_l"] = args.target
    body["trace"] = [{"delta_d": r.delta_d, "delta_l": r.delta_l, "l": r.l, "nnz_V": r.nnz} for r in trace]
    out = Path(args.output)
    bench.write_json(out, body)
    _meta(out, wall_time_s=time.perf_counter() - t0)
    if res is None:
        raise RuntimeError(f"target {args.target:g} unreachable; best delta_l={body['best_delta_l']:.3g}")
    if args.save_factors:
        save_factorization(args.save_factors, res.factorization)
    print(f"delta_d={res.delta_d:g}")


def cmd_bench(args) -> None:
    seed = _seed(args)
    out = Path(args.output)
    t0 = time.perf_counter()
    if args.bench == "sweep":
        A = load_matrix(args.input)
        rows, timings = bench.sweep(A, args.deltas, args.num_eigs, args.max_cols, seed)
        bench.write_csv(out, rows)
        _meta(out, wall_time_s=time.perf_counter() - t0, per_delta_s={repr(k): v for k, v in timings.items()})
        return
    if args.bench == "memory":
        A = load_matrix(args.input)
        F = decompose(A, _cssd_config(args, seed, A.shape[1]))
        bench.write_csv(out, [bench.memory_table(A, F, name=Path(args.input).name)])
        _meta(out, wall_time_s=time.perf_counter() - t0)
        return
    # models
    src = Path(args.input)
    if src.is_dir():
        F, A = load_factorization(src), None
    else:
        A = load_matrix(src)
        F = decompose(A, _cssd_config(args, seed, A.shape[1]))
    if args.workload == "power":
        workload = _tolerant(power_workload(1, SolverConfig(max_iters=args.iters, tol=0.0, seed=seed)))
    else:
        aty = GramOperator.factored(F).correlate(np.random.default_rng(seed).standard_normal(F.m))
        workload = fista_workload(aty, SolverConfig(lam=0.1, max_iters=args.iters, tol=0.0, lipschitz_iters=10, seed=seed))
    models = tuple(m.strip() for m in args.models.split(",") if m.strip())
    rows = compare_models(F, args.workers_list, workload, A=A, models=models)
    walls = [r.pop("wall_time_s") for r in rows]
    bench.write_csv(out, rows)
    _meta(out, wall_time_s=time.perf_counter() - t0, per_row_s=walls)


def _tolerant(workload):
    """Fixed-iteration power workload: a non-converged run still counts its work."""
    from .solvers import ConvergenceError

    def run(op):
        try:
            return workload(op)
        except ConvergenceError as exc:
            return exc.eigenvalues

    return run


_COMMANDS = {"gen": cmd_gen, "decompose": cmd_decompose, "solve": cmd_solve, "tune": cmd_tune, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rankmap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        print(f"rankmap: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
