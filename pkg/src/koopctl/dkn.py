"""Deep Koopman network with state-dependent complex-conjugate eigenvalues.

The latent vector ``y`` holds ``K`` coordinate pairs. An auxiliary network maps
``y`` (or the per-pair squared radii) to growth rates ``mu_k`` and frequencies
``omega_k``; each pair is then advanced by its own scaled rotation.
"""

from __future__ import annotations

import numpy as np

from .dataset import Normalization, SnapshotDataset
from .latent import DKNConfig, LatentModel, fit
from .net import Mlp


def koopman_operator(mu, omega, dt: float) -> np.ndarray:
    """``exp(mu dt) * [[cos, -sin], [sin, cos]](omega dt)``; broadcasts to shape ``(..., 2, 2)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    mu = np.asarray(mu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    e = np.exp(mu * dt)
    c = e * np.cos(omega * dt)
    s = e * np.sin(omega * dt)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


class DKNModel(LatentModel):
    kind = "dkn"

    def __init__(self, encoder, decoder, aux: Mlp, config: DKNConfig, norm, Nt, columns):
        super().__init__(encoder, decoder, config, norm, Nt, columns)
        K = config.n_pairs
        want_in = K if config.aux_input == "radius" else 2 * K
        if aux.input_dim != want_in or aux.output_dim != 2 * K:
            raise ValueError(f"auxiliary net must map {want_in} -> {2 * K}")
        self.aux = aux

    @classmethod
    def init(cls, config: DKNConfig, Nt: int, columns, norm: Normalization | None = None) -> "DKNModel":
        D = Nt * len(columns)
        L = config.latent_dim
        rng = np.random.default_rng([config.seed, 1])
        enc = Mlp.init([D, *config.hidden, L], config.hidden_act, rng)
        dec = Mlp.init([L, *config.hidden[::-1], D], config.hidden_act, rng)
        aux_in = config.n_pairs if config.aux_input == "radius" else L
        aux = Mlp.init([aux_in, *config.aux_hidden, L], config.aux_act, rng)
        return cls(enc, dec, aux, config, norm or Normalization.identity(D), Nt, columns)

    def step_nets(self):
        return [self.aux]

    def _aux_input(self, y):
        if self.config.aux_input == "radius":
            return y[:, 0::2] ** 2 + y[:, 1::2] ** 2
        return y

    def eigenvalues(self, y):
        """``(mu, omega)`` arrays of shape ``(batch, K)`` evaluated at latent points ``y``."""
        out = self.aux(self._aux_input(np.atleast_2d(y)))
        return out[:, 0::2], out[:, 1::2]

    def step_forward(self, y):
        dt = self.config.dt
        inp = self._aux_input(y)
        out, tape = self.aux.forward(inp)
        mu, om = out[:, 0::2], out[:, 1::2]
        e = np.exp(mu * dt)
        c = np.cos(om * dt)
        s = np.sin(om * dt)
        a, b = y[:, 0::2], y[:, 1::2]
        n1 = e * (c * a - s * b)
        n2 = e * (s * a + c * b)
        y_next = np.empty_like(y)
        y_next[:, 0::2] = n1
        y_next[:, 1::2] = n2
        return y_next, (y, tape, e, c, s, n1, n2)

    def step_backward(self, cache, g):
        y, tape, e, c, s, n1, n2 = cache
        dt = self.config.dt
        g1, g2 = g[:, 0::2], g[:, 1::2]
        gy = np.empty_like(y)
        gy[:, 0::2] = e * (c * g1 + s * g2)
        gy[:, 1::2] = e * (-s * g1 + c * g2)
        g_out = np.empty((y.shape[0], 2 * self.config.n_pairs))
        g_out[:, 0::2] = dt * (g1 * n1 + g2 * n2)
        g_out[:, 1::2] = dt * (g2 * n1 - g1 * n2)
        aux_grads, g_in = self.aux.backward(tape, g_out)
        if self.config.aux_input == "radius":
            gy[:, 0::2] += 2.0 * y[:, 0::2] * g_in
            gy[:, 1::2] += 2.0 * y[:, 1::2] * g_in
        else:
            gy += g_in
        return gy, aux_grads

    def freeze_eigenvalues(self, mu, omega) -> None:
        """Make the auxiliary output constant: zero final weights, bias ``(mu_k, omega_k)``."""
        K = self.config.n_pairs
        last = self.aux.layers[-1]
        last.W[...] = 0.0
        last.b[0::2] = np.broadcast_to(mu, (K,))
        last.b[1::2] = np.broadcast_to(omega, (K,))


def latent_step(model: LatentModel, y):
    return model.step(y)


def train(config: DKNConfig, datasets: dict[str, SnapshotDataset]):
    """Train a DKN on normalised datasets; returns ``(model, log_rows)``."""
    train_ds = datasets["train"]
    model = DKNModel.init(config, train_ds.Nt, train_ds.columns, train_ds.normalization)
    return fit(model, datasets)
