"""Hypernetwork-generated low-rank patch embedding and its cost accounting.

For every channel ``c`` a hypernetwork emits ``U_c`` (D x r) and ``V_c``
(r x k^2) from that channel's conditioning row. A patch is embedded as
``sum_c U_c V_c p_c + bias``, computed in two skinny contractions instead of
materializing the dense ``D x k^2`` per-channel kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .content import ContentEncoder, condition_fuse
from .layers import MLP, Module
from .meta import CFF, MetaEncoder
from .numerics import ops
from .numerics.tensor import Tensor


def unfold_patches(x, k: int):
    """(C, H, W) -> (N, C, k*k); also accepts a leading batch axis.

    Works on numpy arrays and on tape tensors.
    """
    is_tensor = isinstance(x, Tensor)
    arr_ndim = x.ndim
    if arr_ndim == 3:
        x = x.reshape(1, *x.shape)
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"spatial extent {h}x{w} not divisible by patch size {k}")
    gh, gw = h // k, w // k
    y = x.reshape(b, c, gh, k, gw, k)
    perm = (0, 2, 4, 1, 3, 5)
    y = ops.transpose(y, perm) if is_tensor else y.transpose(perm)
    y = y.reshape(b, gh * gw, c, k * k)
    return y.reshape(gh * gw, c, k * k) if arr_ndim == 3 else y


def refold_patches(p, k: int, h: int, w: int):
    """Inverse of :func:`unfold_patches` for numpy arrays."""
    p = np.asarray(p)
    single = p.ndim == 3
    if single:
        p = p[None]
    b, n, c, kk = p.shape
    gh, gw = h // k, w // k
    if n != gh * gw or kk != k * k:
        raise ValueError(f"patch tensor {p.shape} does not match {h}x{w} with k={k}")
    x = p.reshape(b, gh, gw, c, k, k).transpose(0, 3, 1, 4, 2, 5).reshape(b, c, h, w)
    return x[0] if single else x


@dataclass
class HyperFactors:
    U: Tensor  # (B, C, D, r)
    V: Tensor  # (B, C, r, k*k)
    bias: Tensor  # (B, D)

    @property
    def channels(self) -> int:
        return self.U.shape[1]


class HyperNet(Module):
    """Three stacks emitting ``U``, ``V`` and ``bias`` from conditioning rows."""

    def __init__(self, d: int, hidden: int, out_dim: int, in_dim: int, rank: int,
                 rng: np.random.Generator, gain: float = 1.0, dtype=np.float32):
        self.f_u = MLP([d, hidden, hidden, out_dim * rank], rng, last_gain=gain, dtype=dtype)
        self.f_v = MLP([d, hidden, hidden, rank * in_dim], rng, last_gain=gain, dtype=dtype)
        self.f_b = MLP([d, hidden, hidden, out_dim], rng, dtype=dtype)
        self.d, self.hidden = d, hidden
        self.out_dim, self.in_dim, self.rank = out_dim, in_dim, rank

    def __call__(self, e: Tensor) -> HyperFactors:
        if e.ndim == 2:
            e = e.reshape(1, *e.shape)
        if e.shape[-1] != self.d:
            raise ValueError(f"hypernetwork expects conditioning width {self.d}, got {e.shape[-1]}")
        b, c, _ = e.shape
        u = self.f_u(e).reshape(b, c, self.out_dim, self.rank)
        v = self.f_v(e).reshape(b, c, self.rank, self.in_dim)
        bias = self.f_b(ops.mean(e, axis=1))
        return HyperFactors(u, v, bias)

    def flops(self, channels: int) -> int:
        return self.f_u.flops(channels) + self.f_v.flops(channels) + self.f_b.flops(1)


def hypernet_generate(e: Tensor, net: HyperNet) -> HyperFactors:
    return net(e)


def factorized_embed(p, factors: HyperFactors, per_channel: bool = False) -> Tensor:
    """Embed patches (B, N, C, k^2) with low-rank factors -> tokens (B, N, D).

    ``per_channel=True`` returns the (B, N, C, D) contributions before the
    channel sum and bias.
    """
    p = p if isinstance(p, Tensor) else Tensor(p)
    if p.ndim == 3:
        p = p.reshape(1, *p.shape)
    b, n, c, kk = p.shape
    U, V = factors.U, factors.V
    if V.shape[1] != c or V.shape[-1] != kk or U.shape[1] != c or U.shape[-1] != V.shape[2]:
        raise ValueError(f"factor shapes U{U.shape} V{V.shape} incompatible with patches {p.shape}")
    z = ops.contract_batched(p, V, "bnck,bcrk->bncr")
    if per_channel:
        return ops.contract_batched(z, U, "bncr,bcdr->bncd")
    r, d = U.shape[-1], U.shape[2]
    # channel and rank sums fused into one (C*r)-long contraction
    z2 = z.reshape(b, n, c * r)
    u2 = ops.transpose(U, (0, 1, 3, 2)).reshape(b, c * r, d)
    out = ops.matmul(z2, u2)
    return out + factors.bias.reshape(b, 1, d)


class HyperEmbedding(Module):
    """Content encoder + condition fusion + hypernetwork + factorized embedding."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        k2 = cfg.patch * cfg.patch
        self.content = ContentEncoder(cfg.grid, cfg.d, rng, dtype=dtype)
        self.fuse = CFF(cfg.d, cfg.d, cfg.d, rng, dtype=dtype)
        self.hyper = HyperNet(cfg.d, cfg.hyper_hidden, cfg.width, k2, cfg.rank, rng,
                              gain=cfg.embed_gain, dtype=dtype)
        self.patch = cfg.patch
        self.mode = cfg.conditioning

    def condition(self, x: Tensor, e_meta: Tensor) -> Tensor:
        if self.mode == "meta":
            e_content = Tensor(np.zeros(e_meta.shape, dtype=e_meta.dtype))
        else:
            e_content = self.content(x, self.patch)
        return condition_fuse(e_meta, e_content, self.fuse, self.mode)

    def __call__(self, x: Tensor, e_meta: Tensor) -> tuple[Tensor, HyperFactors]:
        e = self.condition(x, e_meta)
        factors = self.hyper(e)
        return factorized_embed(unfold_patches(x, self.patch), factors), factors


# -- accounting ----------------------------------------------------------------

def mlp_params(widths) -> int:
    return int(sum(a * b + b for a, b in zip(widths[:-1], widths[1:])))


def mlp_flops(widths, rows: int) -> int:
    return int(sum(2 * rows * a * b for a, b in zip(widths[:-1], widths[1:])))


def _block_params(dim: int, ratio: float) -> int:
    hid = int(dim * ratio)
    return 2 * (2 * dim) + (dim * 3 * dim + 3 * dim) + (dim * dim + dim) + mlp_params([dim, hid, dim])


def _block_flops(dim: int, ratio: float, tokens: int) -> int:
    hid = int(dim * ratio)
    return 2 * tokens * dim * 4 * dim + 4 * tokens * tokens * dim + mlp_flops([dim, hid, dim], tokens)


def _cff_params(d_a: int, d_b: int, d: int) -> int:
    return mlp_params([d_a, d]) + mlp_params([d_b, d]) + mlp_params([2 * d, d, d])


def _cff_flops(d_a: int, d_b: int, d: int, rows: int) -> int:
    return mlp_flops([d_a, d], rows) + mlp_flops([d_b, d], rows) + mlp_flops([2 * d, d, d], rows)


def vanilla_patch_embed_params(channels: int, k: int, width: int) -> int:
    """Static per-channel-count patch embedding: C*k^2*D weights + D biases."""
    return channels * k * k * width + width


def param_count(cfg: ModelConfig, channels: int | None = None) -> dict[str, int]:
    """Closed-form parameter counts of the embedding module's sub-blocks."""
    d, h, r, k2 = cfg.d, cfg.hyper_hidden, cfg.rank, cfg.patch ** 2
    meta = (mlp_params([1, d, d]) + 2 * mlp_params([cfg.provider_dim, d, d // 2]) + 2
            + mlp_params([d, d, d]) + _cff_params(d, d, d)
            + cfg.meta_layers * _block_params(d, cfg.meta_ffn_ratio))
    content = mlp_params([2 * cfg.tokens, d, d])
    fuse = _cff_params(d, d, d)
    f_u = mlp_params([d, h, h, cfg.width * r])
    f_v = mlp_params([d, h, h, r * k2])
    f_b = mlp_params([d, h, h, cfg.width])
    hyper = f_u + f_v + f_b
    total = meta + content + fuse + hyper
    report = {
        "meta_encoder": meta, "content_encoder": content, "condition_fusion": fuse,
        "hyper_U": f_u, "hyper_V": f_v, "hyper_bias": f_b, "hypernetwork": hyper, "total": total,
    }
    if channels is not None:
        report["vanilla_baseline"] = vanilla_patch_embed_params(channels, cfg.patch, cfg.width)
        report["channels"] = channels
    return report


def vit_forward_flops(tokens: int, width: int = 768, depth: int = 12, mlp_ratio: float = 4.0) -> int:
    return depth * _block_flops(width, mlp_ratio, tokens)


def flops_report(cfg: ModelConfig, channels: int, tokens: int | None = None) -> dict[str, float]:
    """Forward FLOPs (2 per multiply-add) of the embedding module at a geometry."""
    n = tokens if tokens is not None else cfg.tokens
    d, h, r, k2, D = cfg.d, cfg.hyper_hidden, cfg.rank, cfg.patch ** 2, cfg.width
    c = channels
    hyper = (mlp_flops([d, h, h, D * r], c) + mlp_flops([d, h, h, r * k2], c)
             + mlp_flops([d, h, h, D], 1))
    meta = (mlp_flops([1, d, d], c) + 2 * mlp_flops([cfg.provider_dim, d, d // 2], 1)
            + mlp_flops([d, d, d], c) + _cff_flops(d, d, d, c)
            + cfg.meta_layers * _block_flops(d, cfg.meta_ffn_ratio, c))
    content = mlp_flops([2 * cfg.tokens, d, d], c) + _cff_flops(d, d, d, c)
    contraction = 2 * n * c * (k2 * r + r * D)
    total = hyper + meta + content + contraction
    vit = vit_forward_flops(n, width=768, depth=12)
    return {
        "channels": c, "tokens": n, "hypernetwork": hyper, "conditioning": meta + content,
        "factorized_contraction": contraction, "total": total, "vit_base_forward": vit,
        "ratio_to_vit_base": total / vit,
    }
