"""Model and training hyperparameters, loaded from JSON with unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .substrate import ACTIVATIONS, ConfigError

# Layer groups carrying their own learning rate, decay and dropout.
GROUPS = ("embedding", "conv", "encoder", "decoder")

KERNEL_MENU = ([1], [2], [3], [1, 3], [1, 3, 5], [2, 3, 5], [1, 2, 3, 5])


class SchemaError(ConfigError):
    def __init__(self, where: str, keys):
        self.keys = sorted(keys)
        super().__init__(f"{where}: unknown keys {self.keys}")


def _per_group(value: float) -> dict[str, float]:
    return {g: value for g in GROUPS}


def _merge_groups(obj, names, where: str) -> None:
    """Group-keyed fields accept a scalar (same value for every group) or a
    partial dict merged over the defaults."""
    defaults = {f.name: f.default_factory for f in dataclasses.fields(obj)}
    for name in names:
        value = getattr(obj, name)
        if isinstance(value, (int, float)):
            setattr(obj, name, _per_group(float(value)))
        elif isinstance(value, dict):
            unknown = set(value) - set(GROUPS)
            if unknown:
                raise SchemaError(f"{where}.{name}", unknown)
            setattr(obj, name, {**defaults[name](), **value})


def _check_groups(name: str, d: dict):
    extra = set(d) - set(GROUPS)
    if extra:
        raise SchemaError(name, extra)
    missing = set(GROUPS) - set(d)
    if missing:
        raise ConfigError(f"{name}: missing groups {sorted(missing)}")


@dataclass
class ModelConfig:
    embedding: str = "learned_static"          # or "frozen_file"
    d_emb: int = 128
    embedding_file: str | None = None
    embedding_trainable: bool = True
    use_conv: bool = True
    kernel_sizes: list[int] = field(default_factory=lambda: [1, 2, 3, 5])
    total_filters: int = 512
    activation: str = "relu"
    encoder_layers: int = 2
    heads: int = 8
    ffn_dim: int | None = None                 # None -> 4 * total_filters
    positional_encoding: bool | None = None    # None -> on for learned_static only
    decoder_layers: int = 2
    decoder: str = "aligned"                   # or "regular"
    intent_pooling: str = "mean"               # or "first"
    dropout: dict[str, float] = field(default_factory=lambda: _per_group(0.1))
    ln_eps: float = 1e-5
    strip_punct: bool = False

    def __post_init__(self):
        _merge_groups(self, ("dropout",), "model")

    @property
    def d_model(self) -> int:
        return self.total_filters

    @property
    def ffn(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.d_model

    @property
    def use_positional(self) -> bool:
        if self.positional_encoding is None:
            return self.embedding == "learned_static"
        return self.positional_encoding

    def validate(self) -> "ModelConfig":
        if self.embedding not in ("learned_static", "frozen_file"):
            raise ConfigError(f"embedding must be learned_static or frozen_file, got {self.embedding!r}")
        if self.embedding == "frozen_file" and not self.embedding_file:
            raise ConfigError("frozen_file embeddings need embedding_file")
        if self.d_emb <= 0:
            raise ConfigError("d_emb must be positive")
        if not self.kernel_sizes or any(k <= 0 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be positive, got {self.kernel_sizes}")
        if self.total_filters <= 0 or self.total_filters % len(self.kernel_sizes):
            raise ConfigError(
                f"total_filters={self.total_filters} is not divisible by "
                f"{len(self.kernel_sizes)} kernel sizes"
            )
        if self.heads <= 0 or self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.encoder_layers < 0 or self.decoder_layers < 1:
            raise ConfigError("encoder_layers must be >= 0 and decoder_layers >= 1")
        if self.decoder not in ("aligned", "regular"):
            raise ConfigError(f"decoder must be aligned or regular, got {self.decoder!r}")
        if self.intent_pooling not in ("mean", "first"):
            raise ConfigError(f"intent_pooling must be mean or first, got {self.intent_pooling!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        _check_groups("model.dropout", self.dropout)
        if any(not 0.0 <= p < 1.0 for p in self.dropout.values()):
            raise ConfigError("dropout probabilities must lie in [0, 1)")
        if self.ln_eps <= 0:
            raise ConfigError("ln_eps must be positive")
        return self


@dataclass
class TrainConfig:
    lr: dict[str, float] = field(default_factory=lambda: {
        "embedding": 1e-4, "conv": 5e-4, "encoder": 5e-4, "decoder": 5e-4})
    gamma: dict[str, float] = field(default_factory=lambda: _per_group(0.95))
    step_size: int = 1
    clip_norm: float | None = 0.5
    batch_size: int = 16
    epochs: int = 50
    seeds: list[int] = field(default_factory=lambda: list(range(1, 11)))
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    intent_weight: float = 1.0
    slot_weight: float = 1.0
    deterministic: bool = False

    def __post_init__(self):
        _merge_groups(self, ("lr", "gamma"), "train")

    def validate(self) -> "TrainConfig":
        _check_groups("train.lr", self.lr)
        _check_groups("train.gamma", self.gamma)
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0 (or null to disable)")
        if self.batch_size < 1 or self.epochs < 0 or self.step_size < 1:
            raise ConfigError("batch_size >= 1, epochs >= 0 and step_size >= 1 required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.betas = tuple(self.betas)
        return self


def _from_dict(cls, d: dict, where: str):
    extra = set(d) - {f.name for f in dataclasses.fields(cls)}
    if extra:
        raise SchemaError(where, extra)
    return cls(**d).validate()


def config_from_dict(d: dict) -> tuple[ModelConfig, TrainConfig]:
    extra = set(d) - {"model", "train"}
    if extra:
        raise SchemaError("config", extra)
    return (
        _from_dict(ModelConfig, d.get("model", {}), "model"),
        _from_dict(TrainConfig, d.get("train", {}), "train"),
    )


def config_to_dict(model: ModelConfig, train: TrainConfig | None = None) -> dict:
    out = {"model": dataclasses.asdict(model)}
    if train is not None:
        out["train"] = dataclasses.asdict(train)
        out["train"]["betas"] = list(train.betas)
    return out


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    with open(Path(path), encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))
