"""Configuration records and their JSON key-value file format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass
class ModelConfig:
    # conditioning
    d: int = 128
    provider_dim: int = 384
    meta_layers: int = 2
    meta_heads: int = 4
    meta_ffn_ratio: float = 4.0
    meta_prenorm: bool = True
    conditioning: str = "both"  # both | meta | content
    # hypernetworks
    rank: int = 4
    hyper_hidden: int = 512
    dec_hyper_hidden: int = 256
    embed_gain: float = 0.1
    head_gain: float = 0.1
    # geometry
    patch: int = 8
    img_size: int = 64
    # backbone
    width: int = 192
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    dec_width: int = 128
    dec_depth: int = 2
    dec_heads: int = 4
    dec_content_layers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.d % 2:
            raise ValueError("d must be even")
        if self.width % self.heads or self.dec_width % self.dec_heads or self.d % self.meta_heads:
            raise ValueError("token widths must be divisible by their head counts")
        if self.img_size % self.patch:
            raise ValueError("img_size must be a multiple of patch")
        if self.conditioning not in ("both", "meta", "content"):
            raise ValueError(f"conditioning must be both|meta|content, got {self.conditioning!r}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")

    @property
    def grid(self) -> tuple[int, int]:
        g = self.img_size // self.patch
        return (g, g)

    @property
    def tokens(self) -> int:
        return (self.img_size // self.patch) ** 2

    @classmethod
    def vit_base(cls, **overrides) -> "ModelConfig":
        """ViT-Base geometry (224 px input, 8 px patches, width 768) for accounting."""
        base = dict(img_size=224, patch=8, width=768, depth=12, heads=12,
                    dec_width=512, dec_depth=8, dec_heads=16)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Tiny geometry for finite-difference checks."""
        base = dict(d=16, provider_dim=12, meta_layers=1, meta_heads=2, rank=2, hyper_hidden=12,
                    dec_hyper_hidden=12, patch=4, img_size=16, width=16, depth=1, heads=2,
                    dec_width=12, dec_depth=1, dec_heads=2, embed_gain=1.0, head_gain=1.0)
        base.update(overrides)
        return cls(**base)


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    epsilon: float = 1e-3
    masked_only: bool = True
    sam_unit: str = "pixel"  # pixel | patch

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.sam_unit not in ("pixel", "patch"):
            raise ValueError("sam_unit must be pixel|patch")


@dataclass
class Stage:
    name: str
    sensors: list[str] = field(default_factory=list)  # sensor keys; empty = all
    per_sensor: int | None = None  # balanced subset size per sensor key
    epochs: int = 20
    warmup_epochs: int = 2

    def __post_init__(self):
        if self.epochs < 1 or self.warmup_epochs < 0:
            raise ValueError("stage needs epochs >= 1 and warmup >= 0")


def default_stages(epochs: int = 20, warmup: int = 2) -> list[Stage]:
    return [
        Stage("single-sensor", sensors=["AVIRIS-3/L1"], epochs=epochs, warmup_epochs=warmup),
        Stage("balanced-mix", per_sensor=None, sensors=["AVIRIS-Classic/L1", "AVIRIS-NG/L1", "AVIRIS-3/L1"],
              epochs=epochs, warmup_epochs=warmup),
        Stage("full", epochs=epochs, warmup_epochs=warmup),
    ]


@dataclass
class TrainConfig:
    lr_base: float = 1.5e-4
    lr_min: float = 1e-5
    warmup_epochs: int = 2
    epochs: int = 20
    batch: int = 8
    accumulate: int = 1
    mask_ratio: float = 0.75
    sensor_name_dropout: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.05
    band_window: int | None = 100
    band_stride: int = 32
    shards: int = 1
    workers: int = 1
    seed: int = 0
    dtype: str = "float32"
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    stages: list[Stage] = field(default_factory=default_stages)

    def __post_init__(self):
        if not self.lr_min <= self.lr_base:
            raise ValueError("lr_min must not exceed lr_base")
        for name in ("mask_ratio", "sensor_name_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.stages:
            raise ValueError("at least one stage is required")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


def _build(cls, doc: dict[str, Any], where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise KeyError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for key, val in doc.items():
        if cls is TrainConfig and key == "loss":
            val = _build(LossConfig, val, f"{where}.loss")
        elif cls is TrainConfig and key == "model":
            val = _build(ModelConfig, val, f"{where}.model")
        elif cls is TrainConfig and key == "stages":
            val = [_build(Stage, s, f"{where}.stages[{i}]") for i, s in enumerate(val)]
        kwargs[key] = val
    return cls(**kwargs)


def config_from_dict(doc: dict[str, Any]) -> TrainConfig:
    return _build(TrainConfig, doc, "config")


def load_config(path: str | Path) -> TrainConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def config_to_dict(cfg) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2))
