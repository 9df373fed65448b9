"""Fully connected comparison model.

Same encoder and decoder as the DKN; the structured operator is replaced by an
unconstrained residual transition ``y + inner(y)``, inner being one relu
hidden layer of width ``2K``.
"""

from __future__ import annotations

import numpy as np

from .dataset import Normalization, SnapshotDataset
from .latent import DKNConfig, LatentModel, fit
from .net import Mlp


class FCNModel(LatentModel):
    kind = "fcn"

    def __init__(self, encoder, decoder, inner: Mlp, config: DKNConfig, norm, Nt, columns):
        super().__init__(encoder, decoder, config, norm, Nt, columns)
        L = config.latent_dim
        if inner.input_dim != L or inner.output_dim != L:
            raise ValueError(f"inner net must map {L} -> {L}")
        self.inner = inner

    @classmethod
    def init(cls, config: DKNConfig, Nt: int, columns, norm: Normalization | None = None) -> "FCNModel":
        D = Nt * len(columns)
        L = config.latent_dim
        rng = np.random.default_rng([config.seed, 1])
        enc = Mlp.init([D, *config.hidden, L], config.hidden_act, rng)
        dec = Mlp.init([L, *config.hidden[::-1], D], config.hidden_act, rng)
        inner = Mlp.init([L, L, L], "relu", rng)
        return cls(enc, dec, inner, config, norm or Normalization.identity(D), Nt, columns)

    def step_nets(self):
        return [self.inner]

    def step_forward(self, y):
        out, tape = self.inner.forward(y)
        return y + out, tape

    def step_backward(self, tape, g):
        grads, g_in = self.inner.backward(tape, g)
        return g + g_in, grads


def fcn_train(config: DKNConfig, datasets: dict[str, SnapshotDataset]):
    train_ds = datasets["train"]
    model = FCNModel.init(config, train_ds.Nt, train_ds.columns, train_ds.normalization)
    return fit(model, datasets)


def fcn_predict(model: FCNModel, embedding, n_steps: int) -> np.ndarray:
    return model.predict_embedding(embedding, n_steps)


def param_delta(fcn: LatentModel, dkn: LatentModel) -> float:
    """Relative parameter-count difference of the FCN against its paired DKN."""
    return (fcn.n_params() - dkn.n_params()) / dkn.n_params()
