"""Matrix- vs graph-based execution on the simulated cluster.

Three sweeps at fixed problem size: growing l with fixed nnz per column,
growing density at fixed l, and growing worker count. Output is one CSV with
a ``sweep`` column; wall times are included since this is a benchmark, not a
report file.
"""

import argparse

from rankmap.bench import random_factorization, write_csv
from rankmap.distexec import compare_models, power_workload
from rankmap.solvers import ConvergenceError, SolverConfig


def fixed_iterations(iters):
    inner = power_workload(1, SolverConfig(max_iters=iters, tol=0.0))

    def run(op):
        try:
            return inner(op)
        except ConvergenceError as exc:
            return exc.eigenvalues

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, default=256)
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--iters", type=int, default=10)
    ap.add_argument("--workers", type=int, default=8)
    ap.add_argument("-o", "--output", default="models.csv")
    args = ap.parse_args()
    work = fixed_iterations(args.iters)
    models = ("matrix", "graph")
    rows = []
    for l in (16, 32, 64, 128):
        F = random_factorization(args.m, args.n, l, 4, seed=l)
        rows += [{"sweep": "l", **r} for r in compare_models(F, [args.workers], work, models=models)]
    for k in (1, 4, 16, 64):
        F = random_factorization(args.m, args.n, 64, k, seed=k)
        rows += [{"sweep": "density", **r} for r in compare_models(F, [args.workers], work, models=models)]
    F = random_factorization(args.m, args.n, 64, 8, seed=0)
    rows += [{"sweep": "workers", **r} for r in compare_models(F, [1, 2, 4, 8, 16], work, models=models + ("full",))]
    write_csv(args.output, rows)
    for r in rows:
        print(f"{r['sweep']:<8} {r['model']:<7} n_c={r['n_c']:<3} l={r['l']:<4} density={r['density']:.4f} "
              f"comm/iter={r['comm_per_application']:<8g} mem={r['memory_total']:<9} {r['wall_time_s']:.3f} s")
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
