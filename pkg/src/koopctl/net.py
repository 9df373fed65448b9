"""Dense feed-forward networks with hand-written reverse mode and Adam.

Batches are row-major: one sample per row, features along columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "relu", "tanh")


def _act(tag, z):
    if tag == "identity":
        return z
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {tag!r}")


def _act_grad(tag, z, a, g):
    if tag == "identity":
        return g
    if tag == "relu":
        return g * (z > 0)
    return g * (1.0 - a * a)


@dataclass
class Layer:
    W: np.ndarray  # (n_in, n_out)
    b: np.ndarray  # (n_out,)
    act: str = "identity"


@dataclass
class GradTape:
    inputs: list
    pre: list
    post: list

    @property
    def batch(self) -> int:
        return self.inputs[0].shape[0]


class Mlp:
    def __init__(self, layers: list[Layer]):
        for a, b in zip(layers, layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ValueError("layer dimensions do not chain")
        for layer in layers:
            if layer.act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.act!r}")
        self.layers = layers

    @classmethod
    def init(cls, sizes, acts, rng) -> "Mlp":
        """Uniform init in +-sqrt(6 / (n_in + n_out)), zero biases."""
        if isinstance(acts, str):
            acts = [acts] * (len(sizes) - 2) + ["identity"]
        layers = []
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], acts):
            lim = np.sqrt(6.0 / (n_in + n_out))
            layers.append(Layer(rng.uniform(-lim, lim, size=(n_in, n_out)), np.zeros(n_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.W.shape[1] for layer in self.layers]

    @property
    def activations(self) -> list[str]:
        return [layer.act for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.W.copy(), l.b.copy(), l.act) for l in self.layers])

    def __call__(self, x):
        for layer in self.layers:
            x = _act(layer.act, x @ layer.W + layer.b)
        return x

    def forward(self, x) -> tuple[np.ndarray, GradTape]:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected batch of width {self.input_dim}, got shape {x.shape}")
        tape = GradTape([], [], [])
        for layer in self.layers:
            tape.inputs.append(x)
            z = x @ layer.W + layer.b
            x = _act(layer.act, z)
            tape.pre.append(z)
            tape.post.append(x)
        return x, tape

    def backward(self, tape: GradTape, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients in ``params()`` order, plus the gradient w.r.t. the input batch."""
        if grad_out.shape != tape.post[-1].shape:
            raise ValueError("output gradient does not match the tape")
        grads = [None] * (2 * len(self.layers))
        g = grad_out
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            g = _act_grad(layer.act, tape.pre[i], tape.post[i], g)
            grads[2 * i] = tape.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ layer.W.T
        return grads, g

    def to_manifest(self) -> dict:
        return {"sizes": self.sizes, "activations": self.activations}

    @classmethod
    def from_flat(cls, manifest: dict, flat: np.ndarray) -> "Mlp":
        sizes, acts = manifest["sizes"], manifest["activations"]
        layers, pos = [], 0
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], acts):
            W = flat[pos : pos + n_in * n_out].reshape(n_in, n_out).copy()
            pos += n_in * n_out
            b = flat[pos : pos + n_out].copy()
            pos += n_out
            layers.append(Layer(W, b, act))
        if pos != flat.size:
            raise ValueError("parameter blob does not match layer sizes")
        return cls(layers)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.params()])


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def opt_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState) -> bool:
    """Bias-corrected Adam update, in place. Returns False (and skips) on non-finite gradients."""
    if not all(np.all(np.isfinite(g)) for g in grads):
        return False
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True
