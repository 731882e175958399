"""Charbonnier + spectral-angle reconstruction objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import LossConfig
from .numerics import ops
from .numerics.tensor import Tensor, as_tensor

SAM_EPS = 1e-8


def _weighted_mean(values: Tensor, weights: np.ndarray | None) -> Tensor:
    if weights is None:
        return ops.mean(values)
    w = np.broadcast_to(weights, values.shape).astype(values.dtype)
    total = w.sum()
    if total <= 0:
        raise ValueError("empty loss support")
    return ops.sum(values * Tensor(w / total))


def charbonnier(x, x_hat, epsilon: float = 1e-3, weights: np.ndarray | None = None) -> Tensor:
    """Mean of sqrt((x - x_hat)^2 + eps^2) over the (weighted) support."""
    x_hat = as_tensor(x_hat)
    x = as_tensor(x, like=x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    diff = x - x_hat
    return _weighted_mean(ops.sqrt(ops.square(diff) + epsilon * epsilon), weights)


def cosine_similarity(x, x_hat, axis: int = -1) -> tuple[Tensor, int]:
    """Cosine along ``axis`` plus the number of zero-norm vectors encountered."""
    x_hat = as_tensor(x_hat)
    x = as_tensor(x, like=x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    dot = ops.sum(x * x_hat, axis=axis)
    nx = ops.sum(ops.square(x), axis=axis)
    ny = ops.sum(ops.square(x_hat), axis=axis)
    zero = int(np.count_nonzero((nx.data == 0) | (ny.data == 0)))
    # the floor only replaces degenerate products, so scale invariance stays exact elsewhere
    prod = nx * ny
    live = (prod.data > SAM_EPS * SAM_EPS).astype(prod.dtype)
    floored = prod * Tensor(live) + Tensor((1.0 - live) * SAM_EPS * SAM_EPS)
    return dot / ops.sqrt(floored), zero


def sam_loss(x, x_hat, axis: int = -1, weights: np.ndarray | None = None) -> Tensor:
    """Mean of 1 - cos(x, x_hat) with spectra along ``axis``."""
    cos, _ = cosine_similarity(x, x_hat, axis=axis)
    return _weighted_mean(1.0 - cos, weights)


@dataclass
class LossBreakdown:
    total: Tensor
    charbonnier: float
    sam: float
    zero_norm_vectors: int = 0


def _support(plan_mask: np.ndarray | None, shape: tuple[int, ...], masked_only: bool) -> np.ndarray | None:
    if not masked_only or plan_mask is None:
        return None
    m = np.asarray(plan_mask, dtype=bool)
    if m.shape != shape[: m.ndim]:
        raise ValueError(f"mask shape {m.shape} does not prefix reconstruction shape {shape}")
    return m


def total_loss(target, recon: Tensor, cfg: LossConfig | None = None,
               masked: np.ndarray | None = None) -> LossBreakdown:
    """alpha * Charbonnier + beta * SAM over reconstruction patches (B, N, C, k^2).

    ``masked`` is a (B, N) boolean array; with ``cfg.masked_only`` only those
    patches contribute. SAM spectra run along the channel axis.
    """
    cfg = cfg or LossConfig()
    recon = as_tensor(recon)
    target = as_tensor(target, like=recon)
    if target.shape != recon.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {recon.shape}")
    if recon.ndim == 3:
        recon = recon.reshape(1, *recon.shape)
        target = target.reshape(1, *target.shape)
        masked = None if masked is None else np.asarray(masked)[None]
    support = _support(masked, recon.shape, cfg.masked_only)
    w_elem = None if support is None else support[:, :, None, None]
    ch = charbonnier(target, recon, cfg.epsilon, w_elem)
    if cfg.sam_unit == "pixel":
        cos, zero = cosine_similarity(target, recon, axis=2)  # (B, N, k^2)
        w_sam = None if support is None else support[:, :, None]
    else:
        cos, zero = cosine_similarity(ops.mean(target, axis=-1), ops.mean(recon, axis=-1), axis=2)
        w_sam = support
    sam = _weighted_mean(1.0 - cos, w_sam)
    total = ch * cfg.alpha + sam * cfg.beta
    return LossBreakdown(total, ch.item(), sam.item(), zero)
