"""Autoencoder models with a learned latent transition, their losses and trainer.

Concrete models differ only in how one latent step is taken:
:class:`koopctl.dkn.DKNModel` uses the eigenvalue-parameterised block operator,
:class:`koopctl.baseline.FCNModel` an unconstrained residual MLP.

Networks act on normalised embeddings. The public ``encode``/``decode`` pair
accepts and returns raw (physical) embeddings.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .container import atomic_write_text
from .dataset import Normalization, SnapshotDataset
from .net import Mlp, OptimizerState, opt_step

log = logging.getLogger(__name__)


@dataclass
class DKNConfig:
    n_pairs: int = 1
    hidden: tuple = (80, 80)
    aux_hidden: tuple = (32,)
    hidden_act: str = "relu"
    aux_act: str = "tanh"
    aux_input: str = "latent"  # "latent" or per-pair "radius"
    dt: float = 0.02
    w_recon: float = 1.0
    w_lin: float = 1.0
    w_pred: float = 1.0
    w_l2: float = 1e-9
    horizon: int = 1
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    lr_decay: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.aux_hidden = tuple(int(h) for h in self.aux_hidden)

    @property
    def latent_dim(self) -> int:
        return 2 * self.n_pairs

    def validate(self) -> list[str]:
        bad = []
        if self.n_pairs < 1:
            bad.append("n_pairs")
        if not self.dt > 0:
            bad.append("dt")
        for name in ("w_recon", "w_lin", "w_pred", "w_l2"):
            if getattr(self, name) < 0:
                bad.append(name)
        if self.horizon < 1:
            bad.append("horizon")
        if self.aux_input not in ("latent", "radius"):
            bad.append("aux_input")
        if self.epochs < 0:
            bad.append("epochs")
        if self.batch_size < 1:
            bad.append("batch_size")
        if not self.lr > 0:
            bad.append("lr")
        return bad

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["aux_hidden"] = list(self.aux_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DKNConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**d)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, model, log_rows):
        super().__init__(f"non-finite loss in epoch {epoch}; returning last good parameters")
        self.epoch = epoch
        self.model = model
        self.log = log_rows


class LatentModel:
    kind = "latent"

    def __init__(self, encoder: Mlp, decoder: Mlp, config: DKNConfig, norm: Normalization,
                 Nt: int, columns: tuple):
        self.encoder = encoder
        self.decoder = decoder
        self.config = config
        self.norm = norm
        self.Nt = Nt
        self.columns = tuple(columns)
        per_step = np.ones(len(self.columns))
        per_step[-1] = 0.0
        self.state_mask = np.tile(per_step, Nt)
        if encoder.output_dim != config.latent_dim or decoder.input_dim != config.latent_dim:
            raise ValueError("encoder/decoder latent width must equal 2 * n_pairs")
        if encoder.input_dim != self.dim or decoder.output_dim != self.dim:
            raise ValueError("encoder/decoder width must equal Nt * len(columns)")

    # -- structure --------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.Nt * len(self.columns)

    @property
    def step_dim(self) -> int:
        return len(self.columns)

    @property
    def n_state(self) -> int:
        return len(self.columns) - 1

    def step_nets(self) -> list[Mlp]:
        raise NotImplementedError

    def nets(self) -> list[Mlp]:
        return [self.encoder, self.decoder, *self.step_nets()]

    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets() for p in net.params()]

    def n_params(self) -> int:
        return sum(net.n_params() for net in self.nets())

    # -- evaluation -------------------------------------------------------

    def encode(self, raw):
        return self.encoder(self.norm.apply(np.atleast_2d(raw)))

    def decode(self, y):
        return self.norm.invert(self.decoder(np.atleast_2d(y)))

    def step(self, y):
        return self.step_forward(np.atleast_2d(y))[0]

    def step_forward(self, y):
        raise NotImplementedError

    def step_backward(self, cache, g):
        raise NotImplementedError

    def predict_embedding(self, raw, n_steps: int) -> np.ndarray:
        """Encode once, take ``n_steps`` latent steps, decode each; shape ``(n_steps, dim)``."""
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        y = self.encode(np.reshape(raw, (1, -1)))
        out = []
        for _ in range(n_steps):
            y = self.step(y)
            out.append(self.decode(y)[0])
        return np.array(out)


@dataclass
class LossTerms:
    recon: float
    lin: float
    pred: float
    total: float


def _objective(model: LatentModel, X, T, valid, grads: bool = True):
    """Loss terms (and gradients in ``model.params()`` order) on normalised data.

    ``T[:, s]`` is the embedding ``s + 1`` steps after ``X``; ``valid[:, s]``
    masks out targets that run past the end of a trajectory.
    """
    cfg = model.config
    B, S, D = T.shape
    L = cfg.latent_dim
    m = model.state_mask
    n_m = m.sum()

    Z, etape = model.encoder.forward(np.concatenate([X, T.reshape(B * S, D)]))
    ys = [Z[:B]]
    z_targets = Z[B:].reshape(B, S, L).transpose(1, 0, 2)
    caches = []
    for _ in range(S):
        y_next, cache = model.step_forward(ys[-1])
        ys.append(y_next)
        caches.append(cache)
    P, dtape = model.decoder.forward(np.concatenate(ys))
    recon = P[:B]
    preds = P[B:].reshape(S, B, D)

    vw = valid.T.astype(float)[..., None]  # (S, B, 1)
    n_v = max(vw.sum(), 1.0)
    e_rec = (recon - X) * m
    e_lin = (np.stack(ys[1:]) - z_targets) * vw
    e_pred = (preds - T.transpose(1, 0, 2)) * m * vw
    l_rec = float((e_rec**2).sum() / (B * n_m))
    l_lin = float((e_lin**2).sum() / (n_v * L))
    l_pred = float((e_pred**2).sum() / (n_v * n_m))
    params = model.params()
    l2 = float(sum((p * p).sum() for p in params))
    total = cfg.w_recon * l_rec + cfg.w_lin * l_lin + cfg.w_pred * l_pred + cfg.w_l2 * l2
    terms = LossTerms(l_rec, l_lin, l_pred, total)
    if not grads:
        return terms, None

    dP = np.concatenate([
        cfg.w_recon * 2.0 * e_rec / (B * n_m),
        (cfg.w_pred * 2.0 * e_pred / (n_v * n_m)).reshape(S * B, D),
    ])
    dec_grads, g_lat = model.decoder.backward(dtape, dP)
    g_lin = cfg.w_lin * 2.0 * e_lin / (n_v * L)
    g_ys = g_lat[B:].reshape(S, B, L) + g_lin
    g_y0 = g_lat[:B].copy()

    step_grads = None
    g = g_ys[S - 1]
    for s in reversed(range(S)):
        g_prev, sg = model.step_backward(caches[s], g)
        step_grads = sg if step_grads is None else [a + b for a, b in zip(step_grads, sg)]
        if s > 0:
            g = g_prev + g_ys[s - 1]
        else:
            g_y0 += g_prev
    dZ = np.concatenate([g_y0, (-g_lin).transpose(1, 0, 2).reshape(B * S, L)])
    enc_grads, _ = model.encoder.backward(etape, dZ)
    all_grads = enc_grads + dec_grads + step_grads
    all_grads = [g + 2.0 * cfg.w_l2 * p for g, p in zip(all_grads, params)]
    return terms, all_grads


def _targets(ds: SnapshotDataset, idx_ahead: np.ndarray, rows: np.ndarray):
    idx = idx_ahead[rows]
    valid = idx >= 0
    T = ds.Xprime[np.where(valid, idx, 0)]
    T[~valid] = 0.0
    return T, valid


def losses(model: LatentModel, X, Xprime) -> LossTerms:
    """One-step reconstruction, linear-dynamics and prediction losses on normalised batches."""
    X = np.atleast_2d(X)
    T = np.atleast_2d(Xprime)[:, None, :]
    terms, _ = _objective(model, X, T, np.ones((X.shape[0], 1), dtype=bool), grads=False)
    if not math.isfinite(terms.total):
        raise FloatingPointError(f"non-finite loss: {terms}")
    return terms


def evaluate(model: LatentModel, ds: SnapshotDataset, horizon: int = 1, chunk: int = 4096,
             idx: np.ndarray | None = None) -> LossTerms:
    """Sample-weighted loss terms over a whole (normalised) split."""
    n = len(ds)
    if n == 0:
        return LossTerms(0.0, 0.0, 0.0, 0.0)
    if idx is None:
        idx = ds.ahead_index(horizon) if horizon > 1 else np.arange(n)[:, None]
    acc = np.zeros(4)
    weight = 0.0
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        T, valid = _targets(ds, idx, rows)
        terms, _ = _objective(model, ds.X[rows], T, valid, grads=False)
        acc += len(rows) * np.array([terms.recon, terms.lin, terms.pred, terms.total])
        weight += len(rows)
    return LossTerms(*(acc / weight))


def fit(model: LatentModel, datasets: dict[str, SnapshotDataset]):
    """Minimise the weighted loss with Adam; keep the parameters with the best validation total.

    Returns ``(model, log_rows)``; each row is ``(epoch, train_recon, train_lin,
    train_pred, val_total)``.
    """
    cfg = model.config
    bad = cfg.validate()
    if bad:
        raise ValueError(f"invalid model config keys: {', '.join(bad)}")
    train = datasets["train"]
    val = datasets.get("validation")
    if train.dim != model.dim:
        raise ValueError(f"dataset width {train.dim} does not match model width {model.dim}")
    idx_train = train.ahead_index(cfg.horizon) if cfg.horizon > 1 else np.arange(len(train))[:, None]
    idx_val = None
    if val is not None and len(val):
        idx_val = val.ahead_index(cfg.horizon) if cfg.horizon > 1 else np.arange(len(val))[:, None]
    params = model.params()
    opt = OptimizerState(lr=cfg.lr)
    best = [p.copy() for p in params]
    best_val = math.inf
    rows_log = []
    n = len(train)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 2, epoch])
        perm = rng.permutation(n)
        acc = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            rows = perm[start : start + cfg.batch_size]
            T, valid = _targets(train, idx_train, rows)
            terms, grads = _objective(model, train.X[rows], T, valid)
            if not math.isfinite(terms.total):
                for p, b in zip(params, best):
                    p[...] = b
                raise TrainingDiverged(epoch, model, rows_log)
            opt_step(params, grads, opt)
            acc += len(rows) * np.array([terms.recon, terms.lin, terms.pred])
        val_total = evaluate(model, val, cfg.horizon, idx=idx_val).total if val is not None and len(val) else math.nan
        if not math.isfinite(val_total) and val is not None and len(val):
            for p, b in zip(params, best):
                p[...] = b
            raise TrainingDiverged(epoch, model, rows_log)
        rows_log.append((epoch, *(acc / n), val_total))
        log.debug("epoch %d train %s val %.6g", epoch, acc / n, val_total)
        score = val_total if math.isfinite(val_total) else float(acc.sum())
        if score < best_val:
            best_val = score
            best = [p.copy() for p in params]
        opt.lr *= cfg.lr_decay
    if cfg.epochs:
        for p, b in zip(params, best):
            p[...] = b
    return model, rows_log


def write_log_csv(path, rows) -> None:
    lines = ["epoch,train_recon,train_lin,train_pred,val_total"]
    lines += [f"{r[0]}," + ",".join(repr(float(v)) for v in r[1:]) for r in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def mean_predictor_loss(ds: SnapshotDataset, mask: np.ndarray) -> float:
    """Per-element variance of the state channels of ``Xprime``: the loss of predicting the mean."""
    if len(ds) == 0:
        return 0.0
    var = ds.Xprime.var(axis=0)
    return float((var * mask).sum() / mask.sum())
