"""``koopctl``: simulate -> train -> analyze -> control -> compare, with run manifests."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, sim
from .baseline import FCNModel, param_delta
from .checkpoint import load_model, save_model
from .config import ConfigError, ControlConfig, DataGenConfig, DKNConfig, derive_seed, load, to_plain
from .container import ContainerError, atomic_write_text, sha256_file
from .dataset import load_datasets, normalize, save_datasets, generate_dataset
from .dkn import DKNModel
from .latent import TrainingDiverged, evaluate, fit, write_log_csv
from .mpc import run_episode
from .spectral import PhaseGrid, export_analysis

log = logging.getLogger("koopctl")


class ContractError(RuntimeError):
    pass


# -- manifests ---------------------------------------------------------------


def manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(out: Path, argv, config, seeds, inputs, outputs, started, extra=None):
    root = out if out.is_dir() else out.parent
    doc = {
        "command": list(argv),
        "config": to_plain(config),
        "seeds": seeds,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(Path(p).relative_to(root)): sha256_file(p) for p in outputs},
        "tool_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_clock_s": round(time.time() - started, 3),
    }
    if extra:
        doc.update(extra)
    atomic_write_text(manifest_path(out), json.dumps(doc, indent=1, sort_keys=True) + "\n")


def verify_input(path: Path) -> None:
    """Inputs must exist and match the digest recorded by any upstream manifest."""
    if not path.exists():
        raise ContractError(f"missing input {path}")
    for man in (manifest_path(path), path.parent / "manifest.json"):
        if not man.exists():
            continue
        doc = json.loads(man.read_text())
        want = doc.get("outputs", {}).get(path.name)
        if want is not None and want != sha256_file(path):
            raise ContractError(f"{path} does not match the digest in {man}")


def _seed(args, config_seed: int, label: str) -> int:
    return config_seed if args.seed is None else derive_seed(args.seed, label)


# -- commands ----------------------------------------------------------------


def cmd_simulate(args, argv):
    started = time.time()
    cfg = load(args.config, DataGenConfig)
    if args.system:
        cfg.system = args.system
    if args.nt is not None:
        cfg.Nt = args.nt
    cfg.seed = _seed(args, cfg.seed, "data")
    bad = cfg.validate()
    if bad:
        raise ConfigError(bad)
    datasets = generate_dataset(cfg)
    out = Path(args.out)
    save_datasets(out, datasets, cfg)
    inputs = [Path(args.config)] if args.config else []
    write_manifest(out, argv, cfg, {"master": args.seed, "data": cfg.seed}, inputs, [out], started)
    print(f"wrote {out}: " + ", ".join(f"{k}={len(v)}" for k, v in datasets.items()))


def cmd_train(args, argv):
    started = time.time()
    ds_path = Path(args.dataset)
    verify_input(ds_path)
    cfg = load(args.config, DKNConfig)
    if args.pairs is not None:
        cfg.n_pairs = args.pairs
    cfg.seed = _seed(args, cfg.seed, "init")
    datasets, norm, header = load_datasets(ds_path)
    cfg.dt = float(header["dt"])
    bad = cfg.validate()
    if bad:
        raise ConfigError(bad)
    nds, _ = normalize(datasets, norm)
    cls = DKNModel if args.kind == "dkn" else FCNModel
    model = cls.init(cfg, header["Nt"], header["columns"], norm)
    out = Path(args.out)
    try:
        model, rows = fit(model, nds)
        status = "ok"
    except TrainingDiverged as err:
        model, rows, status = err.model, err.log, f"diverged at epoch {err.epoch}"
    ev = evaluate(model, nds["evaluation"])
    save_model(out, model, {"dataset": ds_path.name, "status": status,
                            "eval": dataclasses.asdict(ev)})
    log_path = out.with_name(out.name + ".log.csv")
    write_log_csv(log_path, rows)
    inputs = [ds_path] + ([Path(args.config)] if args.config else [])
    extra = {"status": status}
    if args.kind == "fcn":
        extra["param_delta_vs_dkn"] = param_delta(model, DKNModel.init(cfg, model.Nt, model.columns))
    write_manifest(out, argv, cfg, {"master": args.seed, "init": cfg.seed}, inputs, [out, log_path], started, extra)
    print(f"wrote {out} ({args.kind}, {model.n_params()} params, status {status}); eval pred {ev.pred:.6g}")
    if status != "ok":
        raise ContractError(f"training {status}")


def cmd_analyze(args, argv):
    started = time.time()
    for p in (args.model, args.dataset):
        verify_input(Path(p))
    model = load_model(args.model)
    datasets, _, _ = load_datasets(args.dataset)
    grid = PhaseGrid.parse(args.grid) if args.grid else PhaseGrid.default(model.columns)
    out = Path(args.out)
    files = export_analysis(model, datasets["evaluation"], out, grid)
    write_manifest(out, argv, {"grid": grid.describe()}, {"master": args.seed},
                   [Path(args.model), Path(args.dataset)], files, started)
    print(f"wrote {len(files)} files to {out}")


def cmd_control(args, argv):
    started = time.time()
    verify_input(Path(args.model))
    cfg = load(args.cem, ControlConfig)
    cfg.cem.seed = _seed(args, cfg.cem.seed, "cem")
    model = load_model(args.model)
    plant = sim.make_plant(args.plant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files, sums, diverged, timing = [], [], [], []
    for i in range(args.episodes):
        res = run_episode(plant, model, cfg.cem, cfg.cost, cfg.duration_s, cfg.control_hz,
                          x0=(cfg.theta0, 0.0, 0.0), seed=cfg.cem.seed + i, substeps=cfg.substeps,
                          measurement_noise=cfg.measurement_noise)
        path = out / f"episode_{i}.csv"
        res.to_csv(path)
        files.append(path)
        sums.append(res.error_sum)
        diverged.append(res.diverged)
        timing.append(float(res.decision_seconds.mean()))
    summary = {
        "method": model.kind,
        "Nt": model.Nt,
        "n_pairs": model.config.n_pairs,
        "episodes": len(sums),
        "error_sums": sums,
        "mean_error_sum": float(np.mean(sums)),
        "std_error_sum": float(np.std(sums)),
        "diverged": diverged,
    }
    path = out / "summary.json"
    atomic_write_text(path, json.dumps(summary, indent=1, sort_keys=True) + "\n")
    files.append(path)
    write_manifest(out, argv, cfg, {"master": args.seed, "cem": cfg.cem.seed}, [Path(args.model)] +
                   ([Path(args.cem)] if args.cem else []), files, started,
                   {"mean_decision_seconds": timing})
    print(f"{model.kind} Nt={model.Nt}: mean error sum {summary['mean_error_sum']:.4g} "
          f"+- {summary['std_error_sum']:.3g} over {len(sums)} episodes")


def compare_table(summaries: list[dict]) -> list[dict]:
    cells: dict = {}
    for s in summaries:
        cells.setdefault((s["method"], int(s["Nt"])), []).extend(s["error_sums"])
    return [
        {"method": m, "Nt": nt, "mean_error_sum": float(np.mean(v)), "std": float(np.std(v)), "episodes": len(v)}
        for (m, nt), v in sorted(cells.items())
    ]


def cmd_compare(args, argv):
    started = time.time()
    summaries, inputs = [], []
    for run in args.runs:
        path = Path(run) / "summary.json"
        if not path.exists():
            raise ContractError(f"missing {path}")
        verify_input(path)
        summaries.append(json.loads(path.read_text()))
        inputs.append(path)
    rows = compare_table(summaries)
    out = Path(args.out)
    lines = ["method,Nt,mean_error_sum,std"] + [
        f"{r['method']},{r['Nt']},{r['mean_error_sum']!r},{r['std']!r}" for r in rows
    ]
    atomic_write_text(out, "\n".join(lines) + "\n")
    write_manifest(out, argv, {"runs": list(args.runs)}, {"master": args.seed}, inputs, [out], started)
    print("\n".join(lines))


def _out_of(argv) -> Path:
    return Path(argv[argv.index("--out") + 1])


def cmd_rerun(args, argv):
    """Replay a manifest's command; with ``--out`` redirect outputs there. Outputs must match byte for byte."""
    doc = json.loads(Path(args.manifest).read_text())
    old = list(doc["command"])
    new = list(old)
    if args.out:
        new[new.index("--out") + 1] = args.out
    code = main(new)
    if code:
        return code
    old_out, new_out = _out_of(old), _out_of(new)
    mismatched = []
    for rel, digest in doc["outputs"].items():
        if new_out.is_dir():
            path = new_out / rel
        else:
            # file outputs sit next to --out and share its name as a prefix
            path = new_out.parent / (new_out.name + rel[len(old_out.name):])
        if not path.exists() or sha256_file(path) != digest:
            mismatched.append(rel)
    if mismatched:
        print("outputs differ: " + ", ".join(mismatched), file=sys.stderr)
        return 1
    print(f"rerun reproduced {len(doc['outputs'])} outputs byte-identically")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="koopctl", description=__doc__)
    p.add_argument("--version", action="version", version=f"koopctl {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="master seed, expanded per component")
        sp.add_argument("--out", required=True)
        return sp

    sp = common(sub.add_parser("simulate", help="generate a snapshot dataset"))
    sp.add_argument("--system", choices=["rigid", "rigid-pd", "soft"])
    sp.add_argument("--config")
    sp.add_argument("--nt", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("train", help="train a DKN or FCN model"))
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--config")
    sp.add_argument("--kind", choices=["dkn", "fcn"], default="dkn")
    sp.add_argument("--pairs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("analyze", help="export spectral tables"))
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--grid", help='e.g. "q:-3.14159:3.14159:101,qdot:-2:2:101"')
    sp.set_defaults(func=cmd_analyze)

    sp = common(sub.add_parser("control", help="run CEM-MPC episodes on a simulated plant"))
    sp.add_argument("--model", required=True)
    sp.add_argument("--plant", choices=["soft", "rigid"], default="soft")
    sp.add_argument("--cem")
    sp.add_argument("--episodes", type=int, default=5)
    sp.set_defaults(func=cmd_control)

    sp = common(sub.add_parser("compare", help="aggregate control summaries per (method, Nt)"))
    sp.add_argument("--runs", nargs="+", required=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("rerun", help="replay a manifest and check outputs are byte-identical")
    sp.add_argument("manifest")
    sp.add_argument("--out", help="redirect the primary output here")
    sp.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv) or 0
    except (ConfigError, ContractError, ContainerError, FileNotFoundError) as err:
        print(f"koopctl {args.command}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
