"""Model checkpoints: manifest (dims, activations, init scheme, seed) plus a flat float64 blob."""

from __future__ import annotations

import numpy as np

from .baseline import FCNModel
from .container import read_container, write_container
from .dataset import Normalization
from .dkn import DKNModel
from .latent import DKNConfig, LatentModel
from .net import Mlp

CHECKPOINT_FORMAT = "koopctl-model/1"
INIT_SCHEME = "uniform(+-sqrt(6/(n_in+n_out))), zero bias"

_KINDS = {"dkn": DKNModel, "fcn": FCNModel}


def save_model(path, model: LatentModel, extra: dict | None = None) -> None:
    header = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "Nt": model.Nt,
        "columns": list(model.columns),
        "nets": [net.to_manifest() for net in model.nets()],
        "init_scheme": INIT_SCHEME,
        "seed": model.config.seed,
        "n_params": model.n_params(),
        "extra": extra or {},
    }
    arrays = {
        "params": np.concatenate([net.flat() for net in model.nets()]),
        "norm_shift": model.norm.shift,
        "norm_scale": model.norm.scale,
    }
    write_container(path, CHECKPOINT_FORMAT, header, arrays)


def load_model(path) -> LatentModel:
    header, arrays = read_container(path, CHECKPOINT_FORMAT)
    cls = _KINDS[header["kind"]]
    flat = arrays["params"]
    nets, pos = [], 0
    for manifest in header["nets"]:
        sizes = manifest["sizes"]
        count = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
        nets.append(Mlp.from_flat(manifest, flat[pos : pos + count]))
        pos += count
    if pos != flat.size:
        raise ValueError(f"{path}: parameter blob size mismatch")
    config = DKNConfig.from_dict(header["config"])
    norm = Normalization(arrays["norm_shift"], arrays["norm_scale"])
    return cls(*nets, config, norm, header["Nt"], tuple(header["columns"]))
