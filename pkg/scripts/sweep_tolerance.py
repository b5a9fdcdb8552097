"""nnz(V) and top-eigenvalue learning error across the tolerance ladder.

Writes long-form CSV (delta_d, metric, value) ready for plotting.
"""

import argparse
import time

from rankmap.bench import DEFAULT_SWEEP, sweep, write_csv
from rankmap.datasets import low_rank


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, default=128)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--rank", type=int, default=20)
    ap.add_argument("--noise", type=float, default=1e-2)
    ap.add_argument("--num-eigs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("-o", "--output", default="sweep.csv")
    args = ap.parse_args()

    A = low_rank(args.m, args.n, args.rank, args.noise, args.seed)
    t0 = time.perf_counter()
    rows, timings = sweep(A, DEFAULT_SWEEP, num_eigs=args.num_eigs, max_cols=args.m, seed=1)
    write_csv(args.output, rows)
    for d in DEFAULT_SWEEP:
        got = {r["metric"]: r["value"] for r in rows if r["delta_d"] == d}
        print(f"delta_d={d:<6g} l={got['l']:<4} nnz={got['nnz_V']:<8} delta_l={got['delta_l']:.3e} ({timings[d]:.1f} s)")
    print(f"wrote {args.output} in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
