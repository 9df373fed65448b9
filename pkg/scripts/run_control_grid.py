"""Closed-loop grid on the Duffing surrogate: {dkn, fcn} x {Nt=1, Nt=50}, seeded episodes per cell.

    python scripts/run_control_grid.py --episodes 5 --out results/grid.csv
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from koopctl import experiments as ex
from koopctl.dataset import generate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=5)
    ap.add_argument("--nt", type=int, nargs="+", default=[1, 50])
    ap.add_argument("--pairs", type=int, default=ex.SOFT_PAIRS)
    ap.add_argument("--out", type=Path, default=Path("results/grid.csv"))
    args = ap.parse_args()

    rows = []
    for Nt in args.nt:
        raw = generate_dataset(ex.soft_data(Nt))
        for kind in ("dkn", "fcn"):
            run = ex.build(ex.soft_data(Nt), ex.soft_model(args.pairs), kind, datasets=raw)
            sums = ex.control_cell(run.model, ex.soft_control(), args.episodes)
            rows.append([kind, Nt, float(np.mean(sums)), float(np.std(sums))] + sums)
            print(f"{kind} Nt={Nt}: mean error sum {rows[-1][2]:.2f} +- {rows[-1][3]:.2f}")

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "Nt", "mean_error_sum", "std"] + [f"episode_{i}" for i in range(args.episodes)])
        w.writerows(rows)


if __name__ == "__main__":
    main()
