"""Sampling and export of the learned spectral structure.

A grid cell is a single state, but the model needs ``Nt`` history rows: the
cell state is tiled across the window with the control fixed (0 by default).
This fill strategy is stamped into every export as ``history_fill``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import atomic_write_text
from .dataset import SnapshotDataset
from .latent import LatentModel

HISTORY_FILL = "tile-state-zero-control"


@dataclass
class Axis:
    channel: str
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 2 or not self.lo < self.hi:
            raise ValueError(f"invalid axis {self}")

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)


@dataclass
class PhaseGrid:
    x: Axis
    y: Axis
    fixed: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, spec: str) -> "PhaseGrid":
        """Parse ``"q:-3.14:3.14:101,qdot:-2:2:101[,name=value...]"``."""
        axes, fixed = [], {}
        for part in spec.split(","):
            part = part.strip()
            if "=" in part:
                k, v = part.split("=")
                fixed[k.strip()] = float(v)
            else:
                name, lo, hi, n = part.split(":")
                axes.append(Axis(name, float(lo), float(hi), int(n)))
        if len(axes) != 2:
            raise ValueError(f"grid spec needs exactly two axes: {spec!r}")
        return cls(axes[0], axes[1], fixed)

    @classmethod
    def default(cls, columns) -> "PhaseGrid":
        if columns[0] == "q":
            return cls(Axis("q", -math.pi, math.pi, 101), Axis("qdot", -2.0, 2.0, 101))
        return cls(Axis(columns[0], -1.5, 1.5, 101), Axis(columns[1], -2.0, 2.0, 101))

    @property
    def shape(self) -> tuple:
        return (self.x.n, self.y.n)

    def cell_states(self, columns) -> np.ndarray:
        """Per-cell step rows ``(n_x * n_y, len(columns))``, x-major."""
        for name in [self.x.channel, self.y.channel, *self.fixed]:
            if name not in columns:
                raise ValueError(f"grid channel {name!r} not among model channels {columns}")
        gx, gy = np.meshgrid(self.x.values(), self.y.values(), indexing="ij")
        rows = np.zeros((gx.size, len(columns)))
        for name, val in self.fixed.items():
            rows[:, columns.index(name)] = val
        rows[:, columns.index(self.x.channel)] = gx.ravel()
        rows[:, columns.index(self.y.channel)] = gy.ravel()
        return rows

    def describe(self) -> dict:
        return {
            "x": [self.x.channel, self.x.lo, self.x.hi, self.x.n],
            "y": [self.y.channel, self.y.lo, self.y.hi, self.y.n],
            "fixed": dict(sorted(self.fixed.items())),
        }


@dataclass
class SpectralField:
    grid: PhaseGrid
    values: dict
    finite: np.ndarray


def quantity_names(model: LatentModel) -> list[str]:
    K = model.config.n_pairs
    names = []
    if hasattr(model, "eigenvalues"):
        names += [f"mu_{k}" for k in range(1, K + 1)] + [f"omega_{k}" for k in range(1, K + 1)]
    names += [f"{q}_{k}" for q in ("magnitude", "real", "imag") for k in range(1, K + 1)]
    return names + ["energy"]


def latent_quantities(model: LatentModel, y: np.ndarray) -> dict[str, np.ndarray]:
    """All per-sample quantities derived from latent points ``y``."""
    K = model.config.n_pairs
    out = {}
    if hasattr(model, "eigenvalues"):
        mu, om = model.eigenvalues(y)
        for k in range(K):
            out[f"mu_{k + 1}"] = mu[:, k]
            out[f"omega_{k + 1}"] = om[:, k]
    mags = np.hypot(y[:, 0::2], y[:, 1::2])
    for k in range(K):
        out[f"magnitude_{k + 1}"] = mags[:, k]
        out[f"real_{k + 1}"] = y[:, 2 * k]
        out[f"imag_{k + 1}"] = y[:, 2 * k + 1]
    out["energy"] = (mags**2).sum(axis=1)
    return out


def tiled_embeddings(model: LatentModel, rows: np.ndarray) -> np.ndarray:
    return np.tile(rows, (1, model.Nt))


def sample_field(model: LatentModel, grid: PhaseGrid, quantities=None) -> SpectralField:
    quantities = quantities or quantity_names(model)
    rows = grid.cell_states(model.columns)
    y = model.encode(tiled_embeddings(model, rows))
    allq = latent_quantities(model, y)
    unknown = [q for q in quantities if q not in allq]
    if unknown:
        raise ValueError(f"unknown quantities for a {model.kind} model: {unknown}")
    values = {q: allq[q].reshape(grid.shape) for q in quantities}
    finite = np.all([np.isfinite(v) for v in values.values()], axis=0)
    return SpectralField(grid, values, finite)


def line_profile(model: LatentModel, channel: str, values, fixed: dict | None = None) -> dict[str, np.ndarray]:
    """Quantities along a line through phase space; other channels held at ``fixed`` (default 0)."""
    values = np.asarray(values, dtype=float)
    rows = np.zeros((values.size, len(model.columns)))
    for name, val in (fixed or {}).items():
        rows[:, model.columns.index(name)] = val
    rows[:, model.columns.index(channel)] = values
    return latent_quantities(model, model.encode(tiled_embeddings(model, rows)))


def radius_variation(model: LatentModel, dataset: SnapshotDataset, pair: int = 1) -> np.ndarray:
    """Coefficient of variation of one pair's latent radius, per trajectory of a raw dataset."""
    mags = latent_quantities(model, model.encode(dataset.X))[f"magnitude_{pair}"]
    out = []
    for tid in np.unique(dataset.traj_id):
        m = mags[dataset.traj_id == tid]
        if m.size > 1:
            out.append(m.std() / m.mean())
    return np.array(out)


def latent_trajectory(model: LatentModel, rows: np.ndarray, t=None) -> dict[str, np.ndarray]:
    """Encode every sliding window of a trajectory; outputs aligned to the window's last step.

    ``rows`` are per-step ``[x, u]`` rows (e.g. ``Trajectory.rows``).
    """
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] < model.Nt:
        raise ValueError(f"trajectory of length {rows.shape[0]} shorter than Nt = {model.Nt}")
    win = np.lib.stride_tricks.sliding_window_view(rows, (model.Nt, rows.shape[1]))[:, 0]
    y = model.encode(win.reshape(win.shape[0], -1))
    steps = np.arange(model.Nt - 1, rows.shape[0])
    out = {"step": steps, "y": y}
    if t is not None:
        out["t"] = np.asarray(t)[steps]
    out.update(latent_quantities(model, y))
    return out


def _write_csv(path: Path, schema: str, header: list[str], rows) -> int:
    n = 0
    lines = [f"# schema: {schema}", ",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(v) for v in row))
        n += 1
    atomic_write_text(path, "\n".join(lines) + "\n")
    return n


def _fmt(v):
    return int(v) if isinstance(v, (np.integer,)) else float(v)


def export_analysis(model: LatentModel, dataset: SnapshotDataset, out_dir, grid: PhaseGrid | None = None) -> list[Path]:
    """Write plot-ready CSV tables (phase/latent portraits, fields, spectra over time, pair summary).

    ``dataset`` is a raw (un-normalised) evaluation split.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = grid or PhaseGrid.default(model.columns)
    K = model.config.n_pairs
    dt = dataset.dt
    written = []

    newest = dataset.X[:, -model.step_dim :] if len(dataset) else np.empty((0, model.step_dim))
    steps = dataset.t_index + model.Nt - 1
    y = model.encode(dataset.X) if len(dataset) else np.empty((0, 2 * K))
    q = latent_quantities(model, y) if len(dataset) else {n: np.empty(0) for n in quantity_names(model)}

    path = out / "phase_portrait.csv"
    cols = list(model.columns)
    _write_csv(path, "newest state of each evaluation window", ["traj_id", "step", "t", *cols],
               ([int(tr), int(s), float(s * dt), *map(float, r)] for tr, s, r in zip(dataset.traj_id, steps, newest)))
    written.append(path)

    path = out / "latent_portrait.csv"
    ycols = [f"y_{i + 1}" for i in range(2 * K)]
    _write_csv(path, "encoder output per evaluation window; pair k is (y_2k-1, y_2k)", ["traj_id", "step", "t", *ycols],
               ([int(tr), int(s), float(s * dt), *map(float, r)] for tr, s, r in zip(dataset.traj_id, steps, y)))
    written.append(path)

    names = [n for n in quantity_names(model) if not n.startswith(("real_", "imag_"))]
    path = out / "spectrum_over_time.csv"
    _write_csv(path, "eigenvalue and magnitude quantities per evaluation window over time",
               ["traj_id", "step", "t", *names],
               ([int(tr), int(s), float(s * dt), *(float(q[n][i]) for n in names)]
                for i, (tr, s) in enumerate(zip(dataset.traj_id, steps))))
    written.append(path)

    fld = sample_field(model, grid)
    xs, ys = grid.x.values(), grid.y.values()
    for name, vals in fld.values.items():
        path = out / f"field_{name}.csv"
        _write_csv(path, f"{name} over the phase grid, history fill {HISTORY_FILL}; finite=0 flags bad cells",
                   [grid.x.channel, grid.y.channel, "value", "finite"],
                   ([float(xs[i]), float(ys[j]), float(vals[i, j]), int(fld.finite[i, j])]
                    for i in range(grid.x.n) for j in range(grid.y.n)))
        written.append(path)

    path = out / "pair_summary.csv"
    if hasattr(model, "eigenvalues") and len(dataset):
        mu, om = model.eigenvalues(y)
        rows = ([k + 1, float(mu[:, k].mean()), float(mu[:, k].std()), float(om[:, k].mean()), float(om[:, k].std())]
                for k in range(K))
    else:
        rows = []
    _write_csv(path, "per-pair spread of eigenvalues over the evaluation set",
               ["pair", "mu_mean", "mu_std", "omega_mean", "omega_std"], rows)
    written.append(path)

    path = out / "metadata.json"
    meta = {"model_kind": model.kind, "n_pairs": K, "Nt": model.Nt, "history_fill": HISTORY_FILL,
            "grid": grid.describe(), "n_windows": len(dataset)}
    atomic_write_text(path, json.dumps(meta, sort_keys=True, indent=1) + "\n")
    written.append(path)
    return written
