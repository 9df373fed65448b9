"""Cross-entropy-method MPC over a learned latent model.

Any model exposing ``encode``/``step``/``decode`` (DKN or FCN) can be planned
with. A candidate control sequence is scored by rolling the model forward and
summing the angle/velocity cost of each predicted state.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import sim
from .container import atomic_write_text

log = logging.getLogger(__name__)


@dataclass
class CEMConfig:
    n_pop: int = 200
    n_elite: int = 20
    n_iter: int = 5
    horizon: int = 10
    sigma0: float | None = None  # None -> half the bound width
    u_min: float = -2.0
    u_max: float = 2.0
    smoothing: float = 0.5
    warm_start: bool = True
    history_mode: str = "measured"  # "measured" or "decoded"
    seed: int = 0

    def validate(self) -> list[str]:
        bad = []
        if not 1 <= self.n_elite <= self.n_pop:
            bad.append("n_elite")
        if self.n_iter < 1:
            bad.append("n_iter")
        if self.horizon < 1:
            bad.append("horizon")
        if not self.u_min < self.u_max:
            bad.append("u_min/u_max")
        if self.sigma0 is not None and self.sigma0 < 0:
            bad.append("sigma0")
        if not 0 <= self.smoothing < 1:
            bad.append("smoothing")
        if self.history_mode not in ("measured", "decoded"):
            bad.append("history_mode")
        return bad

    @property
    def initial_sigma(self) -> float:
        return 0.5 * (self.u_max - self.u_min) if self.sigma0 is None else self.sigma0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CostSpec:
    w1: float = 1.0
    w2: float = 0.1
    theta_target: float = 0.0
    thetadot_target: float = 0.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("cost weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


UNIT_COST = CostSpec(w1=1.0, w2=1.0)


def wrap_angle(a):
    """Map to (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(a, dtype=float), 2 * math.pi)


def step_cost(theta, thetadot, cost: CostSpec):
    e = wrap_angle(np.asarray(theta) - cost.theta_target)
    ed = np.asarray(thetadot) - cost.thetadot_target
    return cost.w1 * e**2 + cost.w2 * ed**2


def rollout_costs(model, history: np.ndarray, U: np.ndarray, cost: CostSpec,
                  history_mode: str = "measured") -> np.ndarray:
    """Total cost of each candidate sequence in ``U`` (shape ``(P, t_p)``).

    ``history`` is the raw ``Nt``-row window ending at the current tick; its
    newest control entry is overwritten by each candidate's first action. After
    every predicted step the newest row is replaced by the predicted state and
    the candidate's next control. With ``history_mode="measured"`` the older
    rows are the shifted known window, with ``"decoded"`` they come from the
    decoder. Non-finite predictions score ``inf``.
    """
    U = np.atleast_2d(U)
    P, tp = U.shape
    Nt, d = model.Nt, model.step_dim
    W = np.broadcast_to(np.reshape(history, (Nt, d)), (P, Nt, d)).copy()
    W[:, -1, -1] = U[:, 0]
    total = np.zeros(P)
    with np.errstate(all="ignore"):
        for i in range(tp):
            y = model.step(model.encode(W.reshape(P, Nt * d)))
            pred = model.decode(y).reshape(P, Nt, d)
            x_next = pred[:, -1, : d - 1]
            total += step_cost(x_next[:, 0], x_next[:, 1], cost)
            if i + 1 == tp:
                break
            if history_mode == "decoded":
                W = pred
            else:
                W = np.concatenate([W[:, 1:], pred[:, -1:]], axis=1)
            W[:, -1, -1] = U[:, i + 1]
    total[~np.isfinite(total)] = np.inf
    return total


def evaluate_sequence(model, history, sequence, cost: CostSpec, history_mode: str = "measured") -> float:
    return float(rollout_costs(model, history, np.reshape(sequence, (1, -1)), cost, history_mode)[0])


@dataclass
class CEMResult:
    mean: np.ndarray
    sigma: np.ndarray
    elite_costs: list = field(default_factory=list)
    failed: bool = False

    @property
    def action(self) -> float:
        return float(self.mean[0])


def cem_optimize(objective, mean, sigma, cem: CEMConfig, rng) -> CEMResult:
    """Minimise ``objective(samples) -> costs`` over boxed sequences with the cross-entropy method."""
    mean = np.clip(np.array(mean, dtype=float), cem.u_min, cem.u_max)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), mean.shape).copy()
    res = CEMResult(mean, sigma)
    a = cem.smoothing
    for _ in range(cem.n_iter):
        samples = mean + sigma * rng.standard_normal((cem.n_pop, mean.size))
        samples = np.clip(samples, cem.u_min, cem.u_max)
        costs = np.asarray(objective(samples), dtype=float)
        if not np.any(np.isfinite(costs)):
            log.warning("every CEM candidate had infinite cost; returning zero action")
            return CEMResult(np.zeros_like(mean), sigma, res.elite_costs, failed=True)
        elite = np.argsort(costs, kind="stable")[: cem.n_elite]
        res.elite_costs.append(float(costs[elite].mean()))
        mean = a * mean + (1 - a) * samples[elite].mean(axis=0)
        sigma = a * sigma + (1 - a) * samples[elite].std(axis=0)
    res.mean = np.clip(mean, cem.u_min, cem.u_max)
    res.sigma = sigma
    return res


def cem_plan(model, history, cem: CEMConfig, cost: CostSpec, rng, init_mean=None) -> CEMResult:
    bad = cem.validate()
    if bad:
        raise ValueError(f"invalid CEM config keys: {', '.join(bad)}")
    mean = np.zeros(cem.horizon) if init_mean is None else init_mean
    return cem_optimize(
        lambda U: rollout_costs(model, history, U, cost, cem.history_mode),
        mean, cem.initial_sigma, cem, rng,
    )


@dataclass
class ControlEpisodeResult:
    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    cost: np.ndarray  # unit-weight cost per tick
    diverged: bool
    decision_seconds: np.ndarray
    channels: tuple = ("theta", "thetadot", "q")

    @property
    def error_sum(self) -> float:
        return float(self.cost.sum())

    def to_csv(self, path) -> None:
        lines = ["t," + ",".join(self.channels) + ",u,cost"]
        for k in range(len(self.t)):
            vals = [*self.states[k], self.controls[k], self.cost[k]]
            lines.append(f"{self.t[k]:.9g}," + ",".join(repr(float(v)) for v in vals))
        atomic_write_text(path, "\n".join(lines) + "\n")


def run_episode(plant, model, cem: CEMConfig, cost: CostSpec, duration_s: float = 30.0,
                control_hz: float = 20.0, x0=(0.8, 0.0, 0.0), seed: int = 0, substeps: int = 1,
                measurement_noise: float = 0.0) -> ControlEpisodeResult:
    """Receding-horizon control of a simulated plant.

    The model's history window is warm-started by holding the plant at ``x0``
    with zero control. At each tick the window is rebuilt from measurements,
    CEM plans a sequence and only its first action is applied for one tick.
    """
    dt = 1.0 / control_hz
    n_ticks = int(round(duration_s * control_hz))
    rng = np.random.default_rng([seed, 3])
    noise_rng = np.random.default_rng([seed, 4])
    Nt, d = model.Nt, model.step_dim
    x = np.array(x0, dtype=float)
    past = [np.concatenate([x, [0.0]]) for _ in range(Nt - 1)]
    ts, xs, us, cs, secs = [], [], [], [], []
    mean = None
    diverged = False
    for k in range(n_ticks):
        meas = x + measurement_noise * noise_rng.standard_normal(x.size) if measurement_noise else x.copy()
        hist = np.array(past[len(past) - (Nt - 1):] + [np.concatenate([meas, [0.0]])]) if Nt > 1 else \
            np.concatenate([meas, [0.0]])[None, :]
        tic = time.perf_counter()
        plan = cem_plan(model, hist, cem, cost, rng, init_mean=mean)
        secs.append(time.perf_counter() - tic)
        a = float(np.clip(plan.action, cem.u_min, cem.u_max))
        a = float(plant.clamp(a))
        mean = np.concatenate([plan.mean[1:], plan.mean[-1:]]) if cem.warm_start else None
        ts.append(k * dt)
        xs.append(x.copy())
        us.append(a)
        cs.append(float(step_cost(x[0], x[1], UNIT_COST)))
        past.append(np.concatenate([meas, [a]]))
        if len(past) > Nt:
            past.pop(0)
        try:
            for _ in range(substeps):
                x = sim.rk4_step(lambda s: plant.deriv(s, a), x, dt / substeps)
            if np.max(np.abs(x)) > sim.DIVERGENCE_LIMIT:
                raise sim.DivergenceError(k + 1, x)
        except sim.DivergenceError:
            log.warning("plant diverged at tick %d; ending episode", k + 1)
            diverged = True
            break
    return ControlEpisodeResult(
        t=np.array(ts), states=np.array(xs), controls=np.array(us), cost=np.array(cs),
        diverged=diverged, decision_seconds=np.array(secs), channels=tuple(plant.channels),
    )
