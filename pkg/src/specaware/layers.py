"""Minimal module system and transformer building blocks."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .numerics import ops
from .numerics.tensor import Parameter, Tensor


class Module:
    """Attribute-walking parameter container.

    Parameters are discovered in attribute insertion order, so names and
    ordering are stable across runs (checkpoints rely on this).
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def name_parameters(self) -> None:
        for name, p in self.named_parameters():
            p.name = name


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 init: str = "xavier", gain: float = 1.0, dtype=np.float32):
        if init == "zero":
            w = np.zeros((n_in, n_out))
        else:
            bound = gain * math.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.weight = Parameter(w, dtype=dtype)
        self.bias = Parameter(np.zeros(n_out), dtype=dtype) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}weight", self.weight
        if self.bias is not None:
            yield f"{prefix}bias", self.bias

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Linear expects last dim {self.n_in}, got {x.shape[-1]}")
        y = ops.matmul(x, self.weight) if x.ndim >= 2 else ops.matmul(ops.reshape(x, (1, -1)), self.weight).reshape(-1)
        return y + self.bias if self.bias is not None else y

    def flops(self, rows: int) -> int:
        return 2 * rows * self.n_in * self.n_out


class MLP(Module):
    """Linear layers with GELU between them (none after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator, last_init: str = "xavier",
                 last_gain: float = 1.0, dtype=np.float32):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            self.layers.append(Linear(a, b, rng, init=last_init if last else "xavier",
                                      gain=last_gain if last else 1.0, dtype=dtype))
        self.widths = list(widths)

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.gelu(x)
        return x

    def flops(self, rows: int) -> int:
        return sum(layer.flops(rows) for layer in self.layers)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gain = Parameter(np.ones(dim), dtype=dtype)
        self.bias = Parameter(np.zeros(dim), dtype=dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, axis=-1, eps=self.eps)


class Attention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.qkv = Linear(dim, 3 * dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        self.heads = heads
        self.dim = dim
        self.last_weights: np.ndarray | None = None

    def __call__(self, x: Tensor) -> Tensor:
        *lead, t, d = x.shape
        h, dh = self.heads, d // self.heads
        qkv = self.qkv(x).reshape(*lead, t, 3, h, dh)
        nl = len(lead)
        # -> 3, *lead, h, t, dh
        qkv = ops.transpose(qkv, (nl + 1, *range(nl), nl + 2, nl, nl + 3))
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ops.matmul(q, ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        attn = ops.softmax(scores, axis=-1)
        self.last_weights = attn.data
        out = ops.matmul(attn, v)  # *lead, h, t, dh
        out = ops.transpose(out, (*range(nl), nl + 1, nl, nl + 2)).reshape(*lead, t, d)
        return self.proj(out)

    def flops(self, tokens: int) -> int:
        return self.qkv.flops(tokens) + self.proj.flops(tokens) + 4 * tokens * tokens * self.dim


class TransformerBlock(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: float = 4.0,
                 prenorm: bool = True, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = Attention(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = MLP([dim, int(dim * mlp_ratio), dim], rng, dtype=dtype)
        self.prenorm = prenorm

    def __call__(self, x: Tensor) -> Tensor:
        if self.prenorm:
            x = x + self.attn(self.norm1(x))
            return x + self.mlp(self.norm2(x))
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.mlp(x))

    def flops(self, tokens: int) -> int:
        return self.attn.flops(tokens) + self.mlp.flops(tokens)
