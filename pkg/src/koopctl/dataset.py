"""Delay-embedded snapshot datasets in DMD format.

A trajectory with per-step rows ``[x_k, u_k]`` of width ``d`` is cut into
windows of ``Nt`` consecutive rows, flattened oldest-first into vectors of
length ``d * Nt``. ``X[n]`` and ``Xprime[n]`` are the windows starting at
``k`` and ``k + 1``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import sim
from .container import read_container, write_container

log = logging.getLogger(__name__)

DATASET_FORMAT = "koopctl-dataset/1"
SPLITS = ("train", "validation", "evaluation")


@dataclass(frozen=True)
class DelayEmbedding:
    Nt: int
    state_dim: int
    vector: np.ndarray

    def __post_init__(self):
        if self.vector.shape != (self.Nt * self.state_dim,):
            raise ValueError("embedding length must equal Nt * state_dim")

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "DelayEmbedding":
        rows = np.asarray(rows, dtype=float)
        return cls(rows.shape[0], rows.shape[1], rows.reshape(-1).copy())

    def rows(self) -> np.ndarray:
        return self.vector.reshape(self.Nt, self.state_dim)


@dataclass
class ControllerSpec:
    """Data-collection controller.

    kind: ``none`` (u = 0), ``pd`` (single gain set) or ``schedule`` (the
    12 excitation gain/target pairs, cycled over trajectories).
    """

    kind: str = "none"
    kp: float = 10.0
    kd: float = 3.0
    target: float = math.pi
    convention: str = "regulator"
    noise_std: float = 0.0

    def build(self, index: int, seed) -> sim.PDController | sim.ZeroController:
        if self.kind == "none":
            return sim.ZeroController()
        if self.kind == "pd":
            gains = sim.PDGains(self.kp, self.kd, self.target)
        elif self.kind == "schedule":
            table = sim.pd_schedule()
            gains = table[index % len(table)][1]
        else:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        return sim.PDController(gains, self.convention, self.noise_std, seed)


@dataclass
class DataGenConfig:
    system: str = "rigid"
    Nt: int = 50
    dt: float = 0.02
    q0_range: tuple = (-3.1, 3.1)
    qdot0_range: tuple = (-2.0, 2.0)
    n_train: int = 15000
    n_validation: int = 1000
    n_evaluation: int = 3000
    traj_steps: int = 100
    segmentation: str = "overlapping"
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    plant: dict = field(default_factory=dict)
    max_energy: float | None = None
    substeps: int = 1
    max_retries: int = 10
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.controller, dict):
            self.controller = ControllerSpec(**self.controller)
        self.q0_range = tuple(float(v) for v in self.q0_range)
        self.qdot0_range = tuple(float(v) for v in self.qdot0_range)

    def validate(self) -> list[str]:
        bad = []
        if self.system not in ("rigid", "rigid-pd", "soft"):
            bad.append("system")
        if not (isinstance(self.Nt, int) and self.Nt >= 1):
            bad.append("Nt")
        if not self.dt > 0:
            bad.append("dt")
        for name in ("q0_range", "qdot0_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                bad.append(name)
        for name in ("n_train", "n_validation", "n_evaluation"):
            if getattr(self, name) < 1:
                bad.append(name)
        if self.traj_steps < self.Nt:
            bad.append("traj_steps")
        if self.segmentation not in ("overlapping", "disjoint"):
            bad.append("segmentation")
        if self.controller.kind not in ("none", "pd", "schedule"):
            bad.append("controller.kind")
        if self.controller.convention not in ("positive", "regulator"):
            bad.append("controller.convention")
        if self.substeps < 1:
            bad.append("substeps")
        return bad

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q0_range"] = list(self.q0_range)
        d["qdot0_range"] = list(self.qdot0_range)
        return d


@dataclass
class Normalization:
    shift: np.ndarray
    scale: np.ndarray

    def apply(self, a):
        return (a - self.shift) / self.scale

    def invert(self, a):
        return a * self.scale + self.shift

    @classmethod
    def identity(cls, dim: int) -> "Normalization":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, X: np.ndarray) -> "Normalization":
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
        # degenerate variance: keep the column as is, only shifted
        scale = np.where(scale > 1e-12, scale, 1.0)
        return cls(shift, scale)


@dataclass
class SnapshotDataset:
    X: np.ndarray
    Xprime: np.ndarray
    dt: float
    split: str
    Nt: int
    columns: tuple
    traj_id: np.ndarray
    t_index: np.ndarray
    normalization: Normalization | None = None

    def __post_init__(self):
        if self.X.shape != self.Xprime.shape:
            raise ValueError("X and Xprime must have identical shapes")

    def __len__(self):
        return self.X.shape[0]

    @property
    def step_dim(self) -> int:
        return len(self.columns)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def state_mask(self) -> np.ndarray:
        """1 on state channels, 0 on the control channel, over the flattened window."""
        per_step = np.ones(self.step_dim)
        per_step[-1] = 0.0
        return np.tile(per_step, self.Nt)

    def ahead_index(self, horizon: int) -> np.ndarray:
        """``idx[n, s]`` = column whose ``Xprime`` lies ``s + 1`` steps after ``X[n]``, or -1."""
        key = {(int(tr), int(t)): n for n, (tr, t) in enumerate(zip(self.traj_id, self.t_index))}
        idx = np.full((len(self), horizon), -1, dtype=int)
        for n, (tr, t) in enumerate(zip(self.traj_id, self.t_index)):
            for s in range(horizon):
                idx[n, s] = key.get((int(tr), int(t) + s), -1)
        return idx


def embed(traj: sim.Trajectory | np.ndarray, Nt: int, mode: str = "overlapping"):
    """Cut a trajectory into ``(X, Xprime, starts)``.

    ``overlapping`` yields ``len - Nt`` pairs; ``disjoint`` yields windows
    starting at multiples of ``Nt``, each pair consuming ``Nt + 1`` rows.
    """
    rows = traj.rows if isinstance(traj, sim.Trajectory) else np.asarray(traj, dtype=float)
    L, d = rows.shape
    if L < Nt + 1:
        log.warning("trajectory of length %d is shorter than Nt + 1 = %d", L, Nt + 1)
        empty = np.empty((0, d * Nt))
        return empty, empty.copy(), np.empty(0, dtype=int)
    if mode == "overlapping":
        starts = np.arange(L - Nt)
    elif mode == "disjoint":
        starts = np.arange((L - 1) // Nt) * Nt
    else:
        raise ValueError(f"unknown segmentation {mode!r}")
    win = np.lib.stride_tricks.sliding_window_view(rows, (Nt, d))[:, 0]  # (L-Nt+1, Nt, d)
    flat = win.reshape(win.shape[0], Nt * d)
    return flat[starts].copy(), flat[starts + 1].copy(), starts


def window_ending_at(rows: np.ndarray, k: int, Nt: int) -> np.ndarray:
    """Flattened window of the ``Nt`` rows ending at row ``k`` (inclusive)."""
    return np.asarray(rows[k - Nt + 1 : k + 1], dtype=float).reshape(-1)


def _initial_state(config: DataGenConfig, plant, rng) -> np.ndarray:
    """Uniform draw from the configured box; with ``max_energy`` set, rejection-sample below it."""
    for _ in range(10_000):
        q0 = rng.uniform(*config.q0_range)
        qd0 = rng.uniform(*config.qdot0_range)
        x0 = np.array([q0, qd0, 0.0]) if config.system == "soft" else np.array([q0, qd0])
        if config.max_energy is None or plant.energy(x0) < config.max_energy:
            return x0
    raise ValueError(f"no initial state below max_energy={config.max_energy} in the configured ranges")


def simulate_trajectory(config: DataGenConfig, split: int, index: int, plant=None) -> sim.Trajectory:
    """Trajectory ``index`` of split ``split``; seeds are derived by counter from the master seed."""
    plant = plant or sim.make_plant(config.system, config.plant)
    for retry in range(config.max_retries + 1):
        rng = np.random.default_rng([config.seed, split, index, retry])
        x0 = _initial_state(config, plant, rng)
        ctrl = config.controller.build(index, [config.seed, split, index, retry, 1])
        try:
            return sim.rollout(plant, ctrl, x0, config.traj_steps, config.dt, config.substeps)
        except sim.DivergenceError as err:
            log.warning("split %d trajectory %d diverged at step %d; retrying", split, index, err.step)
    raise sim.DivergenceError(-1, f"trajectory {index} diverged {config.max_retries + 1} times")


def generate_dataset(config: DataGenConfig) -> dict[str, SnapshotDataset]:
    bad = config.validate()
    if bad:
        raise ValueError(f"invalid config keys: {', '.join(bad)}")
    plant = sim.make_plant(config.system, config.plant)
    counts = dict(zip(SPLITS, (config.n_train, config.n_validation, config.n_evaluation)))
    out = {}
    for split_code, split in enumerate(SPLITS):
        Xs, Xps, ids, starts = [], [], [], []
        have, index = 0, 0
        columns = None
        while have < counts[split]:
            traj = simulate_trajectory(config, split_code, index, plant)
            columns = traj.columns
            X, Xp, st = embed(traj, config.Nt, config.segmentation)
            take = min(len(X), counts[split] - have)
            Xs.append(X[:take])
            Xps.append(Xp[:take])
            starts.append(st[:take])
            ids.append(np.full(take, index))
            have += take
            index += 1
        out[split] = SnapshotDataset(
            X=np.concatenate(Xs),
            Xprime=np.concatenate(Xps),
            dt=config.dt,
            split=split,
            Nt=config.Nt,
            columns=tuple(columns),
            traj_id=np.concatenate(ids),
            t_index=np.concatenate(starts),
        )
    return out


def normalize(datasets: dict[str, SnapshotDataset], norm: Normalization | None = None):
    """Fit a per-dimension affine map on the training ``X`` and apply it to every split."""
    if norm is None:
        norm = Normalization.fit(datasets["train"].X)
    out = {
        name: replace(ds, X=norm.apply(ds.X), Xprime=norm.apply(ds.Xprime), normalization=norm)
        for name, ds in datasets.items()
    }
    return out, norm


def denormalize(ds: SnapshotDataset) -> SnapshotDataset:
    norm = ds.normalization
    return replace(ds, X=norm.invert(ds.X), Xprime=norm.invert(ds.Xprime), normalization=None)


def save_datasets(path, datasets: dict[str, SnapshotDataset], config: DataGenConfig | None = None,
                  norm: Normalization | None = None) -> None:
    """Persist raw (un-normalised) splits plus the training-split normalisation record."""
    first = next(iter(datasets.values()))
    if norm is None:
        _, norm = normalize(datasets)
    arrays = {"norm_shift": norm.shift, "norm_scale": norm.scale}
    for name, ds in datasets.items():
        if ds.normalization is not None:
            ds = denormalize(ds)
        arrays[f"{name}/X"] = ds.X
        arrays[f"{name}/Xprime"] = ds.Xprime
        arrays[f"{name}/traj_id"] = ds.traj_id.astype(float)
        arrays[f"{name}/t_index"] = ds.t_index.astype(float)
    header = {
        "config": config.to_dict() if config is not None else None,
        "splits": list(datasets),
        "dt": first.dt,
        "Nt": first.Nt,
        "columns": list(first.columns),
    }
    write_container(path, DATASET_FORMAT, header, arrays)


def load_datasets(path) -> tuple[dict[str, SnapshotDataset], Normalization, dict]:
    header, arrays = read_container(path, DATASET_FORMAT)
    norm = Normalization(arrays["norm_shift"], arrays["norm_scale"])
    out = {}
    for name in header["splits"]:
        out[name] = SnapshotDataset(
            X=arrays[f"{name}/X"],
            Xprime=arrays[f"{name}/Xprime"],
            dt=header["dt"],
            split=name,
            Nt=header["Nt"],
            columns=tuple(header["columns"]),
            traj_id=arrays[f"{name}/traj_id"].astype(int),
            t_index=arrays[f"{name}/t_index"].astype(int),
        )
    return out, norm, header


def export_csv(ds: SnapshotDataset, path) -> None:
    names = [f"{c}[{k}]" for k in range(ds.Nt) for c in ds.columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["matrix", "traj_id", "t_index", *names])
        for tag, M in (("X", ds.X), ("Xprime", ds.Xprime)):
            for n in range(len(ds)):
                w.writerow([tag, int(ds.traj_id[n]), int(ds.t_index[n]), *(repr(float(v)) for v in M[n])])
