"""Training configuration and ablation switches."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass

ABLATIONS = (
    "no_global",
    "no_hyper",
    "no_stop",
    "no_cascading",
    "no_mutual",
    "no_cl_intra",
    "no_cl_cross",
    "no_cl_all",
)

NEGATIVE_POOLS = ("in_batch", "full")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 64
    n_layers: int = 1
    n_hyperedges: int = 64
    lr: float = 5e-4
    reg: float = 1e-3
    alpha: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    tau: float = 0.1
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    ablations: tuple[str, ...] = ()
    negative_pool: str = "in_batch"
    dtype: str = "float32"
    # coefficient on the hypergraph term when integrating behavior embeddings
    hyper_weight: float = 1.0
    # multiplier on the Xavier bound of the hyperedge projections; the
    # hypergraph term is cubic in scale, so it starts small
    hyper_init_gain: float = 0.1
    eval_ns: tuple[int, ...] = (10,)

    def __post_init__(self):
        object.__setattr__(self, "ablations", tuple(sorted(set(self.ablations))))
        object.__setattr__(self, "eval_ns", tuple(int(n) for n in self.eval_ns))
        for name in ("embedding_dim", "n_layers", "n_hyperedges", "batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        for name in ("lr", "reg", "alpha", "lambda1", "lambda2", "lambda3", "hyper_init_gain"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        bad = [a for a in self.ablations if a not in ABLATIONS]
        if bad:
            raise ConfigError(f"unknown ablation(s) {bad}; choose from {ABLATIONS}")
        if self.negative_pool not in NEGATIVE_POOLS:
            raise ConfigError(f"negative_pool must be one of {NEGATIVE_POOLS}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        lam = self.lambda1 + self.lambda2 + self.lambda3
        if abs(lam - 3.0) > 1e-9:
            warnings.warn(f"lambda1 + lambda2 + lambda3 = {lam:g}; the reference grid keeps the sum at 3",
                          stacklevel=3)

    def has(self, ablation):
        return ablation in self.ablations

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["ablations"] = list(self.ablations)
        d["eval_ns"] = list(self.eval_ns)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = [k for k in data if k not in known]
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        data = dict(data)
        for key in ("ablations", "eval_ns"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def loss_weights(self):
        """Effective (lambda1, lambda2, lambda3) after ablation switches."""
        l1, l2, l3 = self.lambda1, self.lambda2, self.lambda3
        if self.has("no_cl_cross") or self.has("no_cl_all") or self.has("no_global"):
            l1 = l2 = 0.0
        if self.has("no_cl_intra") or self.has("no_cl_all"):
            l3 = 0.0
        if self.has("no_hyper"):
            l2 = l3 = 0.0
        return l1, l2, l3


def config_hash(config, fingerprint=None):
    """sha256 over the canonical JSON of the config and the dataset fingerprint."""
    payload = {"config": config.to_dict(), "data": fingerprint}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def coerce_value(config, key, text):
    """Parse a ``--set key=value`` string into the type of field ``key``."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    if key not in fields:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(config, key)
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        items = [t for t in text.split(",") if t]
        if key == "eval_ns":
            return tuple(int(t) for t in items)
        return tuple(items)
    return text
