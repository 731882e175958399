"""Image-content features per channel and their fusion with the meta rows."""

from __future__ import annotations

import math

import numpy as np

from .layers import MLP, Module
from .meta import CFF
from .numerics import ops
from .numerics.tensor import Tensor


def _patch_view(x: Tensor, k: int) -> Tensor:
    """(B, C, H, W) -> (B, C, N, k*k) with row-major patch and pixel order."""
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"spatial extent {h}x{w} not divisible by patch size {k}")
    gh, gw = h // k, w // k
    y = x.reshape(b, c, gh, k, gw, k)
    y = ops.transpose(y, (0, 1, 2, 4, 3, 5))
    return y.reshape(b, c, gh * gw, k * k)


def dual_pool(x: Tensor, k: int) -> tuple[Tensor, Tensor]:
    """Non-overlapping k x k average and max pooling, each (B, C, N)."""
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    p = _patch_view(x, k)
    return ops.mean(p, axis=-1), ops.max(p, axis=-1)


def _bins(n_in: int, n_out: int) -> list[tuple[int, int]]:
    return [(math.floor(i * n_in / n_out), math.ceil((i + 1) * n_in / n_out)) for i in range(n_out)]


def adaptive_repool(pooled: Tensor, grid_in: tuple[int, int], grid_out: tuple[int, int], kind: str) -> Tensor:
    """Re-pool a (B, C, N_in) map laid out on ``grid_in`` onto ``grid_out``."""
    if grid_in == grid_out:
        return pooled
    b, c, _ = pooled.shape
    gm = pooled.reshape(b, c, *grid_in)
    cells = []
    for r0, r1 in _bins(grid_in[0], grid_out[0]):
        for c0, c1 in _bins(grid_in[1], grid_out[1]):
            block = gm[:, :, r0:r1, c0:c1].reshape(b, c, -1)
            cells.append(ops.mean(block, axis=-1) if kind == "avg" else ops.max(block, axis=-1))
    return ops.stack(cells, axis=-1)


class ContentEncoder(Module):
    """Maps concatenated [avg, max] pooled maps (width 2N) to ``d`` per channel."""

    def __init__(self, grid: tuple[int, int], d: int, rng: np.random.Generator, dtype=np.float32):
        self.grid = tuple(grid)
        self.tokens = grid[0] * grid[1]
        self.mlp = MLP([2 * self.tokens, d, d], rng, dtype=dtype)

    def project(self, x_avg: Tensor, x_max: Tensor) -> Tensor:
        if x_avg.shape[-1] != self.tokens or x_max.shape[-1] != self.tokens:
            raise ValueError(
                f"content projection configured for N={self.tokens}, got {x_avg.shape[-1]}/{x_max.shape[-1]}"
            )
        return self.mlp(ops.concat([x_avg, x_max], axis=-1))

    def __call__(self, x: Tensor, k: int) -> Tensor:
        x_avg, x_max = dual_pool(x, k)
        grid_in = (x.shape[-2] // k, x.shape[-1] // k)
        x_avg = adaptive_repool(x_avg, grid_in, self.grid, "avg")
        x_max = adaptive_repool(x_max, grid_in, self.grid, "max")
        return self.project(x_avg, x_max)

    def flops(self, channels: int) -> int:
        return self.mlp.flops(channels)


def condition_fuse(e_meta: Tensor, e_content: Tensor, cff: CFF, mode: str = "both") -> Tensor:
    """Fused conditioning rows; ``mode`` zeroes one branch for ablations."""
    if mode == "meta":
        e_content = Tensor(np.zeros(e_content.shape, dtype=e_content.dtype))
    elif mode == "content":
        e_meta = Tensor(np.zeros(e_meta.shape, dtype=e_meta.dtype))
    elif mode != "both":
        raise ValueError(f"unknown conditioning mode {mode!r}")
    if e_meta.shape[-2] != e_content.shape[-2]:
        raise ValueError(f"band counts differ: meta {e_meta.shape} vs content {e_content.shape}")
    return cff(e_meta, e_content)
