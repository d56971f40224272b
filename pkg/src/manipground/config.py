"""Flat, versioned model/training configuration stored as JSON."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

CONFIG_VERSION = 1

ABLATION_FLAGS = ("disable_m_t", "disable_dfc", "disable_i_imq", "disable_t_imq")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class InputError(ValueError):
    """Malformed input data (out-of-vocabulary ids, malformed boxes, ...)."""


@dataclass
class ModelConfig:
    # input geometry
    image_size: int = 32
    channels: int = 3
    patch_size: int = 8
    max_tokens: int = 16
    vocab_size: int = 64
    # architecture
    dim: int = 64
    heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.0
    encoder_depth: int = 2
    interaction_depth: int = 6
    image_queries: int = 1
    text_queries: int = 2
    text_query_projection: bool = False
    reduce_dim: int = 32
    # loss weights
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 1.0
    # optimisation
    batch_size: int = 32
    total_steps: int = 3000
    warmup_steps: int = 200
    peak_lr: float = 3e-4
    floor_lr: float = 1e-6
    weight_decay: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0
    log_every: int = 1
    checkpoint_every: int = 500
    # synthetic data
    n_train: int = 5000
    n_val: int = 500
    n_test: int = 1000
    topics: int = 8
    mix_real: float = 0.4
    mix_fs: float = 0.15
    mix_fa: float = 0.15
    mix_ts: float = 0.15
    mix_ta: float = 0.15
    mix_fs_ts: float = 0.0
    mix_fa_ta: float = 0.0
    data_seed: int = 1234
    # ablations
    disable_m_t: bool = False
    disable_dfc: bool = False
    disable_i_imq: bool = False
    disable_t_imq: bool = False
    seed: int = 0
    config_version: int = field(default=CONFIG_VERSION)

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def replace(self, **changes) -> ModelConfig:
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(f"config_version {self.config_version} != supported {CONFIG_VERSION}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image size {self.image_size} not divisible by patch size {self.patch_size}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        positive = ("image_size", "channels", "patch_size", "max_tokens", "vocab_size", "dim",
                    "heads", "ffn_mult", "interaction_depth", "image_queries", "text_queries",
                    "reduce_dim", "batch_size", "total_steps", "topics")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.encoder_depth < 0:
            raise ConfigError("encoder_depth must be >= 0")
        for name in ("alpha", "beta", "gamma", "weight_decay", "dropout", "grad_clip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 < self.floor_lr <= self.peak_lr:
            raise ConfigError("need 0 < floor_lr <= peak_lr")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError("need 0 <= warmup_steps < total_steps")
        if self.text_queries != 2 and not self.text_query_projection and not self.disable_t_imq:
            raise ConfigError("text_queries != 2 requires text_query_projection = true")
        if self.image_queries != 1:
            raise ConfigError("only a single image manipulation query is supported")
        mix = self.mixture()
        if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
            raise ConfigError(f"mixture proportions must be non-negative and sum to 1, got {mix}")

    def mixture(self) -> dict[str, float]:
        return {"real": self.mix_real, "fs": self.mix_fs, "fa": self.mix_fa, "ts": self.mix_ts,
                "ta": self.mix_ta, "fs+ts": self.mix_fs_ts, "fa+ta": self.mix_fa_ta}

    def ablations(self) -> dict[str, bool]:
        return {k: getattr(self, k) for k in ABLATION_FLAGS}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in data.items():
            default = known[key].default
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{key} must be true/false")
            elif isinstance(default, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{key} must be an integer")
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{key} must be a number")
                value = float(value)
            kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def load_config(path: str | Path) -> ModelConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigError(f"{path}: config must be a flat JSON object")
    return ModelConfig.from_dict(data)


def save_config(cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def tiny_config(**overrides) -> ModelConfig:
    """The small configuration used for gradient checks (D=8, N=4, M=4)."""
    base = dict(image_size=8, patch_size=4, max_tokens=4, vocab_size=64, dim=8, heads=2,
                encoder_depth=1, interaction_depth=2, reduce_dim=4, batch_size=2,
                total_steps=10, warmup_steps=2, n_train=8, n_val=4, n_test=4)
    base.update(overrides)
    cfg = ModelConfig(**base)
    cfg.validate()
    return cfg
