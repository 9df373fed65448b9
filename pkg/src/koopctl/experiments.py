"""Desk-scale experiment presets and the small drivers shared by scripts/ and the acceptance suite.

Every preset is a plain config object, so it can be rendered to YAML and fed
to the CLI unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sim
from .baseline import FCNModel
from .config import ControlConfig
from .dataset import ControllerSpec, DataGenConfig, generate_dataset, normalize
from .dkn import DKNModel
from .latent import DKNConfig, LatentModel, fit
from .mpc import CEMConfig, CostSpec, run_episode

SOFT_PAIRS = 4


def rigid_data(seed: int = 0) -> DataGenConfig:
    """Free pendulum, oscillating orbits only (energy below the separatrix)."""
    return DataGenConfig(system="rigid", Nt=50, dt=0.02, n_train=5000, n_validation=500,
                         n_evaluation=1000, traj_steps=100, max_energy=0.99, seed=seed)


def rigid_model(seed: int = 0) -> DKNConfig:
    return DKNConfig(n_pairs=1, aux_input="radius", dt=0.02, epochs=200, seed=seed)


def rigid_pd_data(seed: int = 0) -> DataGenConfig:
    ctrl = ControllerSpec(kind="pd", kp=10.0, kd=3.0, target=math.pi, convention="regulator")
    return DataGenConfig(system="rigid-pd", Nt=50, dt=0.01, n_train=5000, n_validation=500,
                         n_evaluation=1000, traj_steps=300, segmentation="disjoint",
                         controller=ctrl, seed=seed)


def rigid_pd_model(seed: int = 0) -> DKNConfig:
    return DKNConfig(n_pairs=1, dt=0.01, epochs=200, seed=seed)


def soft_data(Nt: int, seed: int = 0) -> DataGenConfig:
    """Duffing surrogate excited by the dithered PD schedule, restarted from random states."""
    ctrl = ControllerSpec(kind="schedule", convention="positive", noise_std=0.5)
    return DataGenConfig(system="soft", Nt=Nt, dt=0.05, q0_range=(-1.5, 1.5), qdot0_range=(-2.0, 2.0),
                         n_train=20000, n_validation=2000, n_evaluation=2000, traj_steps=200,
                         controller=ctrl, seed=seed)


def soft_model(n_pairs: int = SOFT_PAIRS, horizon: int = 1, seed: int = 0) -> DKNConfig:
    return DKNConfig(n_pairs=n_pairs, hidden=(128, 128), dt=0.05, epochs=100, horizon=horizon, seed=seed)


def soft_control(seed: int = 0) -> ControlConfig:
    return ControlConfig(cem=CEMConfig(seed=seed), cost=CostSpec(), duration_s=30.0, control_hz=20.0, theta0=0.8)


@dataclass
class Trained:
    model: LatentModel
    raw: dict
    data: dict
    log: list


def build(data_cfg: DataGenConfig, model_cfg: DKNConfig, kind: str = "dkn", datasets=None) -> Trained:
    """Generate (or reuse) a dataset, normalise it and train one model on it."""
    raw = datasets if datasets is not None else generate_dataset(data_cfg)
    data, norm = normalize(raw)
    cls = {"dkn": DKNModel, "fcn": FCNModel}[kind]
    model = cls.init(model_cfg, data_cfg.Nt, raw["train"].columns, norm)
    model, log = fit(model, data)
    return Trained(model, raw, data, log)


def control_cell(model: LatentModel, cfg: ControlConfig, episodes: int = 5, plant=None) -> list[float]:
    """Error sums of ``episodes`` seeded closed-loop runs."""
    plant = plant or sim.DuffingSurrogate()
    sums = []
    for i in range(episodes):
        res = run_episode(plant, model, cfg.cem, cfg.cost, cfg.duration_s, cfg.control_hz,
                          x0=(cfg.theta0, 0.0, 0.0), seed=cfg.cem.seed + i, substeps=cfg.substeps,
                          measurement_noise=cfg.measurement_noise)
        sums.append(res.error_sum if not res.diverged else math.inf)
    return sums


def rank_order(values) -> np.ndarray:
    return np.argsort(np.asarray(values, dtype=float), kind="stable")
