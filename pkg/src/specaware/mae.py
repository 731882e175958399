"""Masked autoencoder with hypernetwork patch embedding and reconstruction head."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ModelConfig, config_to_dict
from .content import condition_fuse
from .hyper import HyperEmbedding, HyperFactors, HyperNet, unfold_patches
from .layers import LayerNorm, Linear, Module, TransformerBlock
from .meta import CFF, MetaEncoder, TextEmbeddingProvider
from .numerics import ops
from .numerics.tensor import Parameter, Tensor
from .sensors import SensorSpec


# -- masking --------------------------------------------------------------------

@dataclass
class MaskPlan:
    ratio: float
    visible_idx: np.ndarray
    masked_idx: np.ndarray
    seed: int | None = None

    @property
    def tokens(self) -> int:
        return len(self.visible_idx) + len(self.masked_idx)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.tokens, dtype=bool)
        m[self.masked_idx] = True
        return m


def masked_count(n: int, ratio: float) -> int:
    return int(math.floor(ratio * n + 0.5))


def random_masking(n: int, ratio: float, seed: int | np.random.Generator | None = None) -> MaskPlan:
    """Uniform subset of ``round(ratio * n)`` masked tokens; index lists sorted."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1), got {ratio}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(n)
    m = masked_count(n, ratio)
    return MaskPlan(ratio, np.sort(perm[m:]), np.sort(perm[:m]),
                    seed if isinstance(seed, int) else None)


@dataclass
class BatchMask:
    plans: list[MaskPlan]

    @property
    def visible(self) -> np.ndarray:
        return np.stack([p.visible_idx for p in self.plans])

    @property
    def masked(self) -> np.ndarray:
        return np.stack([p.masked_idx for p in self.plans])

    def mask(self) -> np.ndarray:
        return np.stack([p.mask() for p in self.plans])

    @property
    def restore(self) -> np.ndarray:
        """Index into concat(visible, masked) that recovers original order."""
        order = np.concatenate([self.visible, self.masked], axis=1)
        return np.argsort(order, axis=1, kind="stable")


def batch_masking(batch: int, n: int, ratio: float, rng: np.random.Generator) -> BatchMask:
    return BatchMask([random_masking(n, ratio, rng) for _ in range(batch)])


# -- positions --------------------------------------------------------------------

def sincos_1d(dim: int, pos: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = np.outer(pos.reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(dim: int, grid: tuple[int, int]) -> np.ndarray:
    """(gh*gw, dim) fixed 2-D sine-cosine table, rows in row-major patch order."""
    if dim % 4:
        raise ValueError("2-D sin-cos embedding needs width divisible by 4")
    gh, gw = grid
    rows, cols = np.meshgrid(np.arange(gh, dtype=np.float64), np.arange(gw, dtype=np.float64), indexing="ij")
    return np.concatenate([sincos_1d(dim // 2, rows), sincos_1d(dim // 2, cols)], axis=1)


# -- backbone ---------------------------------------------------------------------

class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.blocks = [TransformerBlock(cfg.width, cfg.heads, rng, cfg.mlp_ratio, dtype=dtype)
                       for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.width, dtype=dtype)
        self.width = cfg.width

    def __call__(self, tokens: Tensor, masks: BatchMask | None, grid: tuple[int, int]) -> Tensor:
        b, n, _ = tokens.shape
        x = tokens + Tensor(sincos_2d(self.width, grid).astype(tokens.dtype))
        if masks is not None:
            x = x[np.arange(b)[:, None], masks.visible]
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.embed = Linear(cfg.width, cfg.dec_width, rng, dtype=dtype)
        self.mask_token = Parameter(rng.normal(0.0, 0.02, cfg.dec_width), dtype=dtype)
        self.blocks = [TransformerBlock(cfg.dec_width, cfg.dec_heads, rng, cfg.mlp_ratio, dtype=dtype)
                       for _ in range(cfg.dec_depth)]
        self.norm = LayerNorm(cfg.dec_width, dtype=dtype)
        self.width = cfg.dec_width

    def unshuffle(self, y: Tensor, masks: BatchMask) -> Tensor:
        """Place visible rows at their positions and the mask token elsewhere."""
        b, nv, w = y.shape
        nm = masks.masked.shape[1]
        fill = ops.broadcast_to(self.mask_token, (b, nm, w))
        full = ops.concat([y, fill], axis=1)
        return full[np.arange(b)[:, None], masks.restore]

    def __call__(self, latents: Tensor, masks: BatchMask, grid: tuple[int, int]) -> Tensor:
        x = self.unshuffle(self.embed(latents), masks)
        x = x + Tensor(sincos_2d(self.width, grid).astype(x.dtype))
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class HyperLinear(Module):
    """Reconstruction head whose per-channel factors come from a hypernetwork."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        k2 = cfg.patch ** 2
        self.content_blocks = [TransformerBlock(cfg.dec_width, cfg.dec_heads, rng, cfg.mlp_ratio, dtype=dtype)
                               for _ in range(cfg.dec_content_layers)]
        self.fuse = CFF(cfg.d, cfg.dec_width, cfg.d, rng, dtype=dtype)
        # U': (k^2 x r), V': (r x D_dec), bias': k^2
        self.hyper = HyperNet(cfg.d, cfg.dec_hyper_hidden, k2, cfg.dec_width, cfg.rank, rng,
                              gain=cfg.head_gain, dtype=dtype)
        self.mode = cfg.conditioning

    def decoder_content(self, x_dec: Tensor, channels: int) -> Tensor:
        """Global average over tokens, refined, broadcast to (B, C, D_dec)."""
        pooled = ops.mean(x_dec, axis=1, keepdims=True)
        for blk in self.content_blocks:
            pooled = blk(pooled)
        b, _, w = pooled.shape
        return ops.broadcast_to(pooled, (b, channels, w))

    def factors(self, x_dec: Tensor, e_meta: Tensor) -> HyperFactors:
        channels = e_meta.shape[-2]
        if self.mode == "meta":
            content = Tensor(np.zeros((x_dec.shape[0], channels, x_dec.shape[-1]), dtype=x_dec.dtype))
        else:
            content = self.decoder_content(x_dec, channels)
        return self.hyper(condition_fuse(e_meta, content, self.fuse, self.mode))

    def __call__(self, x_dec: Tensor, e_meta: Tensor) -> Tensor:
        return hyperlinear_reconstruct(x_dec, self.factors(x_dec, e_meta))


def hyperlinear_reconstruct(x_dec, f: HyperFactors) -> Tensor:
    """(B, N, D_dec) latents -> (B, N, C, k^2) patches via U'_c V'_c x + bias'."""
    x = x_dec if isinstance(x_dec, Tensor) else Tensor(x_dec)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if f.V.shape[-1] != x.shape[-1]:
        raise ValueError(f"latent width {x.shape[-1]} does not match V' {f.V.shape}")
    b = x.shape[0]
    y = ops.contract_batched(x, f.V, "bnd,bcrd->bncr")
    out = ops.contract_batched(y, f.U, "bncr,bckr->bnck")
    return out + f.bias.reshape(b, 1, 1, -1)


# -- full model --------------------------------------------------------------------

@dataclass
class MimOutput:
    reconstruction: Tensor  # (B, N, C, k^2)
    target: np.ndarray  # (B, N, C, k^2)
    masks: BatchMask
    latents: Tensor


class SpecAwareMAE(Module):
    def __init__(self, cfg: ModelConfig, provider: TextEmbeddingProvider | None = None, dtype=np.float32):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        if provider is None:
            provider = TextEmbeddingProvider.default()
            if provider.dimension != cfg.provider_dim:
                provider = TextEmbeddingProvider.hashed_only(cfg.provider_dim)
        self.provider = provider
        if self.provider.dimension != cfg.provider_dim:
            raise ValueError(f"provider dimension {self.provider.dimension} != config {cfg.provider_dim}")
        self.meta = MetaEncoder(cfg.d, rng, cfg.provider_dim, cfg.meta_layers, cfg.meta_heads,
                                cfg.meta_ffn_ratio, cfg.meta_prenorm, dtype=dtype)
        self.embed = HyperEmbedding(cfg, rng, dtype=dtype)
        self.encoder = Encoder(cfg, rng, dtype=dtype)
        self.decoder = Decoder(cfg, rng, dtype=dtype)
        self.head = HyperLinear(cfg, rng, dtype=dtype)
        self.name_parameters()

    def named_parameters(self, prefix: str = ""):
        for key in ("meta", "embed", "encoder", "decoder", "head"):
            yield from getattr(self, key).named_parameters(f"{prefix}{key}.")

    @property
    def dtype(self):
        return self.decoder.mask_token.dtype

    def embedding_parameters(self) -> list[Parameter]:
        return self.meta.parameters() + self.embed.parameters()

    def backbone_parameters(self) -> list[Parameter]:
        return self.parameters()

    def meta_embedding(self, spec: SensorSpec, names: Sequence[str] | None = None, batch: int = 1) -> Tensor:
        e = self.meta(spec, self.provider, names=names, batch=batch).values
        return e

    def tokens(self, cube, spec: SensorSpec, names: Sequence[str] | None = None):
        x = cube if isinstance(cube, Tensor) else Tensor(np.asarray(cube, dtype=self.dtype))
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.shape[1] != spec.band_count:
            raise ValueError(f"cube has {x.shape[1]} channels, sensor spec {spec.band_count}")
        e_meta = self.meta_embedding(spec, names, batch=x.shape[0])
        tok, factors = self.embed(x, e_meta)
        return x, e_meta, tok, factors

    def grid_of(self, x) -> tuple[int, int]:
        k = self.cfg.patch
        return (x.shape[-2] // k, x.shape[-1] // k)

    def encode_features(self, cube, spec: SensorSpec, names: Sequence[str] | None = None) -> Tensor:
        """Mean-pooled encoder tokens with nothing masked: (B, width)."""
        x, _, tok, _ = self.tokens(cube, spec, names)
        lat = self.encoder(tok, None, self.grid_of(x))
        return ops.mean(lat, axis=1)

    def forward_mim(self, cube, spec: SensorSpec, masks: BatchMask | None = None,
                    names: Sequence[str] | None = None, mask_ratio: float = 0.75,
                    rng: np.random.Generator | None = None) -> MimOutput:
        x, e_meta, tok, _ = self.tokens(cube, spec, names)
        grid = self.grid_of(x)
        if masks is None:
            masks = batch_masking(x.shape[0], tok.shape[1], mask_ratio, rng or np.random.default_rng(0))
        lat = self.encoder(tok, masks, grid)
        x_dec = self.decoder(lat, masks, grid)
        recon = self.head(x_dec, e_meta)
        target = unfold_patches(x.data, self.cfg.patch)
        return MimOutput(recon, target, masks, lat)


# -- checkpoints -------------------------------------------------------------------

CKPT_MAGIC = b"SPAWCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Module, path: str | Path, cfg=None, extra: dict | None = None) -> bytes:
    """Header (magic, version, JSON echo) then named f32 little-endian blocks."""
    header = {"format_version": CKPT_VERSION,
              "config": config_to_dict(cfg) if cfg is not None else None,
              "extra": extra or {}}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(hbytes)), hbytes]
    named = list(model.named_parameters())
    parts.append(struct.pack("<I", len(named)))
    for name, p in named:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    blob = b"".join(parts)
    Path(path).write_bytes(blob)
    return blob


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:8] != CKPT_MAGIC:
        raise CheckpointError("bad magic")
    off = 8
    try:
        version, hlen = struct.unpack_from("<HI", blob, off)
        off += 6
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
        off += hlen
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if off + 4 * size > len(blob):
                raise CheckpointError(f"truncated block {name!r}")
            state[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape).copy()
            off += 4 * size
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint") from exc
    if off != len(blob):
        raise CheckpointError("trailing bytes after last block")
    return header, state


def load_checkpoint(model: Module, path: str | Path, cfg=None) -> dict:
    header, state = read_checkpoint(path)
    if cfg is not None and header.get("config") is not None:
        mine = config_to_dict(cfg)
        theirs = header["config"]
        if mine.get("model", mine) != theirs.get("model", theirs):
            raise CheckpointError("checkpoint model configuration does not match")
    model.load_state_dict(state)
    return header
