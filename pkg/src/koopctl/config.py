"""Structured-text (YAML) configs mirroring the dataclass field names, plus seed expansion."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataset import ControllerSpec, DataGenConfig
from .latent import DKNConfig
from .mpc import CEMConfig, CostSpec


class ConfigError(ValueError):
    def __init__(self, keys, where=""):
        self.keys = list(keys)
        super().__init__(f"invalid config{(' ' + where) if where else ''}: {', '.join(self.keys)}")


@dataclass
class ControlConfig:
    cem: CEMConfig = field(default_factory=CEMConfig)
    cost: CostSpec = field(default_factory=CostSpec)
    duration_s: float = 30.0
    control_hz: float = 20.0
    theta0: float = 0.8
    substeps: int = 1
    measurement_noise: float = 0.0

    def validate(self) -> list[str]:
        bad = [f"cem.{k}" for k in self.cem.validate()]
        if not self.duration_s > 0:
            bad.append("duration_s")
        if not self.control_hz > 0:
            bad.append("control_hz")
        if self.substeps < 1:
            bad.append("substeps")
        if self.measurement_noise < 0:
            bad.append("measurement_noise")
        return bad


NESTED = {
    DataGenConfig: {"controller": ControllerSpec},
    ControlConfig: {"cem": CEMConfig, "cost": CostSpec},
}


def to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_plain(v) for k, v in obj.items()}
    return obj


def render(cfg) -> str:
    return yaml.safe_dump(to_plain(cfg), sort_keys=True, default_flow_style=False)


def _build(cls, data, prefix):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    bad = [prefix + k for k in sorted(set(data) - names)]
    kwargs = {}
    for k in sorted(set(data) & names):
        sub = NESTED.get(cls, {}).get(k)
        if sub is not None and isinstance(data[k], dict):
            kwargs[k], sub_bad = _build(sub, data[k], prefix + k + ".")
            bad += sub_bad
        else:
            kwargs[k] = data[k]
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(bad + [f"{prefix}<{err}>"]) from None
    return obj, bad


def from_plain(cls, data: dict | None, prefix: str = ""):
    """Build ``cls`` from a mapping; every unknown or invalid key is reported at once."""
    obj, bad = _build(cls, data, prefix)
    validate = getattr(obj, "validate", None)
    if validate is not None:
        bad += [prefix + k for k in validate() if prefix + k not in bad]
    if bad:
        raise ConfigError(bad)
    return obj


def parse(text: str, cls):
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(["<top level must be a mapping>"])
    return from_plain(cls, data)


def load(path, cls):
    if path is None:
        return cls()
    return parse(Path(path).read_text(), cls)


def derive_seed(master: int, label: str) -> int:
    """Per-component seed from one master seed and a label."""
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


__all__ = [
    "ConfigError", "ControlConfig", "DKNConfig", "DataGenConfig", "CEMConfig", "CostSpec",
    "render", "parse", "load", "derive_seed", "to_plain", "from_plain",
]
