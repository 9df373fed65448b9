"""Compare latent sizes on the soft surrogate (Nt=1, 8-step horizon) and export each spectrum.

    python scripts/run_pairs.py --pairs 1 9 --out results/pairs
"""

import argparse
import json
from pathlib import Path

from koopctl import experiments as ex
from koopctl.dataset import generate_dataset
from koopctl.latent import evaluate
from koopctl.spectral import export_analysis


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, nargs="+", default=[1, 9])
    ap.add_argument("--horizon", type=int, default=8)
    ap.add_argument("--out", type=Path, default=Path("results/pairs"))
    args = ap.parse_args()

    raw = generate_dataset(ex.soft_data(1))
    summary = {}
    for K in args.pairs:
        run = ex.build(ex.soft_data(1), ex.soft_model(K, args.horizon), datasets=raw)
        export_analysis(run.model, run.raw["evaluation"], args.out / f"K{K}")
        summary[K] = evaluate(run.model, run.data["evaluation"]).pred
        print(f"K={K}: eval pred {summary[K]:.3e}")
    (args.out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")


if __name__ == "__main__":
    main()
