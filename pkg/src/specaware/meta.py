"""Per-band metadata encoding: wavelength, FWHM and sensor text attributes.

The result is one ``d``-wide row per spectral band. Wavelength rows come from
a fixed Fourier basis; everything else is learned.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .layers import MLP, Linear, Module, TransformerBlock
from .numerics import ops
from .numerics.tensor import Parameter, Tensor
from .sensors import SensorSpec

LAMBDA_MIN_UM = 0.350
LAMBDA_MAX_UM = 2.550
UNKNOWN = "unknown"
# FWHM enters the MLP in units of 10 nm so typical values are O(1)
FWHM_SCALE = 100.0


def fourier_wavelengths(d: int) -> np.ndarray:
    if d % 2:
        raise ValueError(f"Fourier encoding width must be even, got {d}")
    if d < 4:
        raise ValueError("Fourier encoding width must be at least 4")
    return np.geomspace(LAMBDA_MIN_UM, LAMBDA_MAX_UM, d // 2)


def fourier_wavelength_encoding(wavelengths_um, d: int) -> np.ndarray:
    """C x d matrix; columns ``2i, 2i+1`` hold ``cos, sin`` of ``2*pi*x/lambda_i``."""
    x = np.asarray(wavelengths_um, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("wavelengths must be positive")
    lam = fourier_wavelengths(d)
    phase = 2.0 * np.pi * x[:, None] / lam[None, :]
    out = np.empty((x.shape[0], d))
    out[:, 0::2] = np.cos(phase)
    out[:, 1::2] = np.sin(phase)
    return out


class TextEmbeddingProvider:
    """Deterministic string -> unit vector lookup.

    Known strings come from a table; anything else is hashed to a seeded
    Gaussian vector. Empty strings map to the reserved ``"unknown"`` row.
    """

    def __init__(self, table: dict[str, np.ndarray], dimension: int, mode: str = "table"):
        if mode not in ("table", "hashed"):
            raise ValueError(f"unknown provider mode {mode!r}")
        self.dimension = dimension
        self.mode = mode
        self.table = {k: _unit(np.asarray(v, dtype=np.float64)) for k, v in table.items()}
        for k, v in self.table.items():
            if v.shape != (dimension,):
                raise ValueError(f"table entry {k!r} has shape {v.shape}, expected ({dimension},)")
        if UNKNOWN not in self.table:
            self.table[UNKNOWN] = self.hashed(UNKNOWN)
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def default(cls) -> "TextEmbeddingProvider":
        text = resources.files("specaware").joinpath("data/text_table.json").read_text()
        return cls.from_document(json.loads(text))

    @classmethod
    def from_file(cls, path: str | Path) -> "TextEmbeddingProvider":
        return cls.from_document(json.loads(Path(path).read_text()))

    @classmethod
    def from_document(cls, doc: dict) -> "TextEmbeddingProvider":
        vectors = doc["vectors"] if "vectors" in doc else doc
        dim = int(doc.get("dimension", len(next(iter(vectors.values())))))
        return cls({k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}, dim)

    @classmethod
    def hashed_only(cls, dimension: int = 384) -> "TextEmbeddingProvider":
        return cls({}, dimension, mode="hashed")

    def hashed(self, text: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
        return _unit(np.random.default_rng(seed).standard_normal(self.dimension))

    def __call__(self, text: str) -> np.ndarray:
        key = text.strip() or UNKNOWN
        if key not in self._cache:
            if self.mode == "table" and key in self.table:
                self._cache[key] = self.table[key]
            elif key == UNKNOWN:
                self._cache[key] = self.table[UNKNOWN]
            else:
                self._cache[key] = self.hashed(key)
        return self._cache[key]


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


class CFF(Module):
    """Cross-modal fusion: project both inputs to ``d``, concatenate, residual MLP."""

    def __init__(self, d_a: int, d_b: int, d: int, rng: np.random.Generator, dtype=np.float32):
        self.proj_a = Linear(d_a, d, rng, dtype=dtype)
        self.proj_b = Linear(d_b, d, rng, dtype=dtype)
        self.mlp = MLP([2 * d, d, d], rng, dtype=dtype)
        self.d_a, self.d_b = d_a, d_b

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[-1] != self.d_a or b.shape[-1] != self.d_b:
            raise ValueError(f"CFF expects widths ({self.d_a}, {self.d_b}), got ({a.shape[-1]}, {b.shape[-1]})")
        pa, pb = self.proj_a(a), self.proj_b(b)
        shape = np.broadcast_shapes(pa.shape, pb.shape)
        if pa.shape != shape:
            pa = ops.broadcast_to(pa, shape)
        if pb.shape != shape:
            pb = ops.broadcast_to(pb, shape)
        return pa + pb + self.mlp(ops.concat([pa, pb], axis=-1))

    def flops(self, rows: int) -> int:
        return self.proj_a.flops(rows) + self.proj_b.flops(rows) + self.mlp.flops(rows)


@dataclass
class MetaEmbedding:
    values: Tensor  # (B, C, d)

    @property
    def band_count(self) -> int:
        return self.values.shape[-2]


class MetaEncoder(Module):
    def __init__(self, d: int, rng: np.random.Generator, provider_dim: int = 384, layers: int = 2,
                 heads: int = 4, ffn_ratio: float = 4.0, prenorm: bool = True, dtype=np.float32):
        if d % 2:
            raise ValueError(f"meta width must be even, got {d}")
        self.d = d
        self.fwhm_mlp = MLP([1, d, d], rng, dtype=dtype)
        self.name_mlp = MLP([provider_dim, d, d // 2], rng, dtype=dtype)
        self.level_mlp = MLP([provider_dim, d, d // 2], rng, dtype=dtype)
        self.fuse_alpha = Parameter(np.float64(1.0), dtype=dtype)
        self.fuse_beta = Parameter(np.float64(1.0), dtype=dtype)
        self.fuse_mlp = MLP([d, d, d], rng, dtype=dtype)
        self.cff = CFF(d, d, d, rng, dtype=dtype)
        self.blocks = [TransformerBlock(d, heads, rng, mlp_ratio=ffn_ratio, prenorm=prenorm, dtype=dtype)
                       for _ in range(layers)]
        self.provider_dim = provider_dim

    @property
    def dtype(self):
        return self.fuse_alpha.dtype

    # individual stages ----------------------------------------------------
    def wavelength_encoding(self, spec: SensorSpec) -> Tensor:
        return Tensor(fourier_wavelength_encoding(spec.wavelengths_um, self.d).astype(self.dtype))

    def fwhm_encoding(self, fwhm_um) -> Tensor:
        fw = np.asarray(fwhm_um, dtype=np.float64)
        if np.any(fw <= 0):
            raise ValueError("fwhm must be positive")
        return self.fwhm_mlp(Tensor((fw[:, None] * FWHM_SCALE).astype(self.dtype)))

    def text_encoding(self, names: Sequence[str], levels: Sequence[str], provider: TextEmbeddingProvider,
                      bands: int) -> tuple[Tensor, Tensor]:
        """Per-sample name/level rows broadcast to ``bands``: two (B, C, d/2) tensors."""
        name_vecs = np.stack([provider(n) for n in names]).astype(self.dtype)[:, None, :]
        level_vecs = np.stack([provider(lv) for lv in levels]).astype(self.dtype)[:, None, :]
        e_name = self.name_mlp(Tensor(name_vecs))
        e_level = self.level_mlp(Tensor(level_vecs))
        shape = (len(names), bands, self.d // 2)
        return ops.broadcast_to(e_name, shape), ops.broadcast_to(e_level, shape)

    def fuse_spectral(self, e_wl: Tensor, e_fwhm: Tensor) -> Tensor:
        if e_wl.shape != e_fwhm.shape:
            raise ValueError(f"spectral fusion shape mismatch {e_wl.shape} vs {e_fwhm.shape}")
        fused = self.fuse_alpha * e_wl + self.fuse_beta * e_fwhm
        return fused + self.fuse_mlp(fused)

    @staticmethod
    def concat_sensor(e_name: Tensor, e_level: Tensor) -> Tensor:
        if e_name.shape != e_level.shape:
            raise ValueError(f"name/level widths differ: {e_name.shape} vs {e_level.shape}")
        return ops.concat([e_name, e_level], axis=-1)

    def spectral_transformer(self, e_c: Tensor) -> Tensor:
        for blk in self.blocks:
            e_c = blk(e_c)
        return e_c

    # composition ------------------------------------------------------------
    def __call__(self, spec: SensorSpec, provider: TextEmbeddingProvider,
                 names: Sequence[str] | None = None, batch: int = 1) -> MetaEmbedding:
        """Encode ``spec``; ``names`` overrides the sensor name per sample (for dropout)."""
        if names is None:
            names = [spec.name] * batch
        levels = [spec.level.value] * len(names)
        e_spec = self.fuse_spectral(self.wavelength_encoding(spec), self.fwhm_encoding(spec.fwhm_um))
        e_name, e_level = self.text_encoding(names, levels, provider, spec.band_count)
        e_sensor = self.concat_sensor(e_name, e_level)
        e_c = self.cff(e_spec, e_sensor)
        return MetaEmbedding(self.spectral_transformer(e_c))

    def flops(self, bands: int) -> int:
        f = self.fwhm_mlp.flops(bands) + self.fuse_mlp.flops(bands) + self.cff.flops(bands)
        f += self.name_mlp.flops(1) + self.level_mlp.flops(1)
        return f + sum(b.flops(bands) for b in self.blocks)
