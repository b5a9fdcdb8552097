"""Stored entries of A, of D with least-squares V, and of D with sparse V."""

import argparse

from rankmap.bench import memory_table, write_csv
from rankmap.cssd import CssdConfig, decompose
from rankmap.datasets import block_diagonal_v, low_rank, union_of_subspaces


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delta-d", type=float, default=0.05)
    ap.add_argument("-o", "--output", default="memory.csv")
    args = ap.parse_args()
    datasets = {
        "union_of_subspaces": union_of_subspaces(256, 20000, K=10, r=6, noise=1e-3, seed=0),
        "block_diagonal_v": block_diagonal_v(256, 20000, blocks=8, block_rows=4, noise=1e-3, seed=0),
        "low_rank": low_rank(256, 20000, 24, noise=1e-2, seed=0),
    }
    rows = []
    for name, A in datasets.items():
        F = decompose(A, CssdConfig(delta_d=args.delta_d, max_cols=256, seed=0))
        rows.append(memory_table(A, F, name=name))
    write_csv(args.output, rows)
    print(f"{'dataset':<20}{'original':>12}{'least_sq':>12}{'rankmap':>12}{'ratio':>9}  beneficial")
    for r in rows:
        print(f"{r['dataset']:<20}{r['original']:>12}{r['least_squares']:>12}{r['rankmap']:>12}"
              f"{r['rankmap_ratio']:>9.1f}  {r['beneficial']}")
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
