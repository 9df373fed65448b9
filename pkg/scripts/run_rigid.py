"""Train the free and PD-driven rigid pendulum models and dump their spectral summaries.

    python scripts/run_rigid.py --out results/rigid
"""

import argparse
import json
import math
from pathlib import Path

import numpy as np

from koopctl import experiments as ex
from koopctl.latent import evaluate, mean_predictor_loss, write_log_csv
from koopctl.spectral import export_analysis, latent_quantities, line_profile, radius_variation


def summarise_free(run):
    ev = run.data["evaluation"]
    q = np.linspace(0.0, 3.0, 31)
    mu = latent_quantities(run.model, run.model.encode(run.raw["evaluation"].X))["mu_1"]
    cv = radius_variation(run.model, run.raw["evaluation"])
    return {
        "eval_pred": evaluate(run.model, ev).pred,
        "baseline_pred": mean_predictor_loss(ev, run.model.state_mask),
        "radius_cv_max": float(cv.max()),
        "radius_cv_median": float(np.median(cv)),
        "omega_on_q_axis": dict(zip(map(float, q), map(float, line_profile(run.model, "q", q)["omega_1"]))),
        "mu_mean": float(mu.mean()),
    }


def summarise_pd(run):
    ev = run.data["evaluation"]
    offsets = np.linspace(-0.3, 0.3, 13)
    return {
        "eval_pred": evaluate(run.model, ev).pred,
        "baseline_pred": mean_predictor_loss(ev, run.model.state_mask),
        "omega_near_target": float(line_profile(run.model, "q", math.pi + offsets)["omega_1"].mean()),
        "omega_near_bottom": float(line_profile(run.model, "q", offsets)["omega_1"].mean()),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/rigid"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    jobs = {
        "free": (ex.rigid_data(args.seed), ex.rigid_model(args.seed), summarise_free),
        "pd": (ex.rigid_pd_data(args.seed), ex.rigid_pd_model(args.seed), summarise_pd),
    }
    for name, (data_cfg, model_cfg, summarise) in jobs.items():
        out = args.out / name
        out.mkdir(parents=True, exist_ok=True)
        run = ex.build(data_cfg, model_cfg)
        write_log_csv(out / "train_log.csv", run.log)
        export_analysis(run.model, run.raw["evaluation"], out / "analysis")
        summary = summarise(run)
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        print(name, json.dumps({k: v for k, v in summary.items() if not isinstance(v, dict)}))


if __name__ == "__main__":
    main()
