"""Fixed-step simulation of the benchmark systems.

Three plants are provided: the rigid pendulum (with or without a PD loop) and a
Duffing-type dual-well oscillator standing in for the soft inverted pendulum.
All are integrated with classic RK4 and a zero-order hold on the control.
Angles are never wrapped here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """Raised when a rollout leaves the finite, bounded region."""

    def __init__(self, step: int, state=None):
        super().__init__(f"state diverged at step {step}: {state}")
        self.step = step
        self.state = state


@dataclass(frozen=True)
class RigidPendulumParams:
    g: float = -1.0
    l: float = 1.0
    m: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if not (self.l > 0 and self.m > 0 and self.c >= 0):
            raise ValueError(f"invalid pendulum parameters {self}")


@dataclass(frozen=True)
class PendulumState:
    q: float
    qdot: float
    u: float = 0.0


@dataclass(frozen=True)
class DuffingSurrogateParams:
    alpha: float = 4.0
    beta: float = 6.25
    delta: float = 0.4
    kappa: float = 4.0
    u_limit: float = 2.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.delta >= 0 and self.u_limit > 0):
            raise ValueError(f"invalid surrogate parameters {self}")

    @property
    def well(self) -> float:
        return math.sqrt(self.alpha / self.beta)


@dataclass(frozen=True)
class SoftPendulumState:
    theta: float
    thetadot: float
    q: float = 0.0


@dataclass(frozen=True)
class PDGains:
    kp: float
    kd: float
    target: float = 0.0

    def __post_init__(self):
        vals = (self.kp, self.kd, self.target)
        if not all(math.isfinite(v) for v in vals) or self.kp < 0 or self.kd < 0:
            raise ValueError(f"invalid PD gains {self}")


# excitation schedule used for soft-plant data: (kp, kd, targets)
PD_TABLE = {
    "PD1": (0.3, 0.1, (0.0, 0.8, -0.8)),
    "PD2": (0.3, 0.2, (0.0, 0.1, -0.1)),
    "PD3": (0.1, 0.2, (0.0, 0.8, -0.8)),
    "PD4": (0.1, 0.3, (0.0, 0.8, -0.8)),
}


def pd_schedule() -> list[tuple[str, PDGains]]:
    """All (controller label, gains) pairs of the excitation table, 12 in total."""
    return [
        (name, PDGains(kp, kd, target))
        for name, (kp, kd, targets) in PD_TABLE.items()
        for target in targets
    ]


def schedule_steps(minutes: float, control_hz: float) -> int:
    return int(round(minutes * 60 * control_hz))


def rigid_pendulum_deriv(state: PendulumState, params: RigidPendulumParams = RigidPendulumParams()):
    """Return ``(dq, dqdot)`` for the damped, torque-driven pendulum."""
    dqdot = (params.g / params.l) * math.sin(state.q) + (
        state.u - params.c * state.qdot
    ) / (params.m * params.l) ** 2
    return state.qdot, dqdot


def duffing_deriv(
    state: SoftPendulumState, u: float, params: DuffingSurrogateParams = DuffingSurrogateParams()
):
    """Return ``(dtheta, dthetadot, dq)``; the joint-velocity command is clamped to ``u_limit``."""
    u = min(max(u, -params.u_limit), params.u_limit)
    th, thd = state.theta, state.thetadot
    dthd = params.alpha * th - params.beta * th**3 - params.delta * thd + params.kappa * u
    return thd, dthd, u


def pd_control(angle, velocity, gains: PDGains, convention: str = "positive"):
    """PD law.

    ``"positive"`` is ``-kp*(target - angle) + kd*velocity``, positive feedback
    on the error. It is what the soft-plant excitation data uses. ``"regulator"``
    is its negation; only that one stabilises the rigid pendulum at its target.
    """
    u = -gains.kp * (gains.target - angle) + gains.kd * velocity
    if convention == "positive":
        return u
    if convention == "regulator":
        return -u
    raise ValueError(f"unknown PD convention {convention!r}")


def rk4_step(deriv: Callable[[np.ndarray], np.ndarray], x, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = deriv(x)
    k2 = deriv(x + 0.5 * dt * k1)
    k3 = deriv(x + 0.5 * dt * k2)
    k4 = deriv(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(-1, out)
    return out


# -- plants -------------------------------------------------------------------
# A plant exposes state channel names, the control channel name, and a
# vectorised ``deriv(x, u)`` over the last axis of ``x``.


@dataclass(frozen=True)
class RigidPendulum:
    params: RigidPendulumParams = field(default_factory=RigidPendulumParams)
    channels: tuple = ("q", "qdot")
    control: str = "u"

    def deriv(self, x, u):
        p = self.params
        q, qd = x[..., 0], x[..., 1]
        qdd = (p.g / p.l) * np.sin(q) + (u - p.c * qd) / (p.m * p.l) ** 2
        return np.stack([qd, qdd], axis=-1)

    def clamp(self, u):
        return u

    def energy(self, x):
        """Hamiltonian of the unforced, frictionless pendulum (per unit m l^2)."""
        p = self.params
        return 0.5 * x[..., 1] ** 2 + (p.g / p.l) * np.cos(x[..., 0])


@dataclass(frozen=True)
class DuffingSurrogate:
    params: DuffingSurrogateParams = field(default_factory=DuffingSurrogateParams)
    channels: tuple = ("theta", "thetadot", "q")
    control: str = "u"

    def deriv(self, x, u):
        p = self.params
        u = self.clamp(u)
        th, thd = x[..., 0], x[..., 1]
        thdd = p.alpha * th - p.beta * th**3 - p.delta * thd + p.kappa * u
        return np.stack([thd, thdd, np.broadcast_to(u, th.shape).astype(float)], axis=-1)

    def clamp(self, u):
        return np.clip(u, -self.params.u_limit, self.params.u_limit)

    def energy(self, x):
        """Undamped, unforced energy; the wells sit at its minima."""
        p = self.params
        th = x[..., 0]
        return 0.5 * x[..., 1] ** 2 - 0.5 * p.alpha * th**2 + 0.25 * p.beta * th**4


# -- controllers -----------------------------------------------------------------


class ZeroController:
    def __call__(self, k: int, x: np.ndarray) -> float:
        return 0.0


class PDController:
    """PD law on state channels 0 (angle) and 1 (velocity), optionally dithered.

    The dither is drawn from a seeded generator and held for one control tick.
    """

    def __init__(self, gains: PDGains, convention: str = "positive", noise_std: float = 0.0, seed=None):
        self.gains = gains
        self.convention = convention
        self.noise_std = noise_std
        self.rng = np.random.default_rng(seed)

    def __call__(self, k: int, x: np.ndarray) -> float:
        u = pd_control(float(x[0]), float(x[1]), self.gains, self.convention)
        if self.noise_std > 0:
            u += self.noise_std * self.rng.standard_normal()
        return u


@dataclass
class Trajectory:
    """States ``x[k]`` and the control ``u[k]`` held from ``t[k]`` to ``t[k+1]``.

    ``u`` has the same length as ``x``; the last entry is the controller's
    output at the final state, never applied.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    channels: tuple
    control: str = "u"

    def __len__(self):
        return len(self.t)

    @property
    def rows(self) -> np.ndarray:
        """Per-step ``[x, u]`` rows, shape ``(len, n_state + 1)``."""
        return np.column_stack([self.x, self.u])

    @property
    def columns(self) -> tuple:
        return (*self.channels, self.control)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *self.columns])
            for tk, row in zip(self.t, self.rows):
                w.writerow([f"{tk:.9g}", *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path) as fh:
            r = csv.reader(fh)
            head = next(r)
            data = np.array([[float(v) for v in row] for row in r], dtype=float).reshape(-1, len(head))
        return cls(t=data[:, 0], x=data[:, 1:-1], u=data[:, -1], channels=tuple(head[1:-1]), control=head[-1])


def rollout(plant, controller, x0, n_steps: int, dt: float, substeps: int = 1) -> Trajectory:
    """Integrate ``n_steps`` control ticks of length ``dt`` from ``x0``.

    The controller is evaluated at every tick before integration and its
    (clamped) output is held for ``substeps`` RK4 steps of ``dt / substeps``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.array(x0, dtype=float)
    xs = np.empty((n_steps + 1, x.size))
    us = np.empty(n_steps + 1)
    h = dt / substeps
    for k in range(n_steps + 1):
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise DivergenceError(k, x)
        xs[k] = x
        u = float(plant.clamp(controller(k, x)))
        us[k] = u
        if k == n_steps:
            break
        for _ in range(substeps):
            try:
                x = rk4_step(lambda s: plant.deriv(s, u), x, h)
            except DivergenceError as err:
                raise DivergenceError(k + 1, err.state) from None
    t = dt * np.arange(n_steps + 1)
    return Trajectory(t=t, x=xs, u=us, channels=tuple(plant.channels), control=plant.control)


def make_plant(system: str, plant_params: dict | None = None):
    plant_params = dict(plant_params or {})
    if system in ("rigid", "rigid-pd"):
        return RigidPendulum(RigidPendulumParams(**plant_params))
    if system == "soft":
        return DuffingSurrogate(DuffingSurrogateParams(**plant_params))
    raise ValueError(f"unknown system {system!r}")
