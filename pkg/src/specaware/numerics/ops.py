"""Differentiable primitives over :class:`Tensor`.

Broadcasting follows numpy (trailing-axis alignment); gradients of broadcast
inputs are summed back to the input shape.
"""

from __future__ import annotations

import builtins
import itertools
import math
import re

import numpy as np
from scipy.special import erf

from .tensor import Tensor, as_tensor, make_node

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# -- binary elementwise --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        gb = -g * out / b.data
        return unbroadcast(g / b.data, a.shape), unbroadcast(gb, b.shape)

    return make_node(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,))


# -- unary elementwise ---------------------------------------------------------

def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative value")
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def cos(a: Tensor) -> Tensor:
    return make_node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def sin(a: Tensor) -> Tensor:
    return make_node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out = x * cdf

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return make_node(out.astype(x.dtype, copy=False), (a,), bw)


def square(a: Tensor) -> Tensor:
    return make_node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


_UNARY = {
    "sqrt": sqrt, "exp": exp, "log": log, "cos": cos, "sin": sin,
    "gelu": gelu, "relu": relu, "tanh": tanh, "neg": neg, "square": square,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *args) -> Tensor:
    if op in _BINARY:
        if len(args) != 2:
            raise TypeError(f"{op} takes two operands")
        return _BINARY[op](*args)
    if op in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op} takes one operand")
        return _UNARY[op](as_tensor(args[0]))
    raise ValueError(f"unknown elementwise op {op!r}")


# -- shape ops -----------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return make_node(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    return make_node(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (unbroadcast(g, a.shape),))


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_node(np.array(out, copy=True), (a,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return make_node(out, tensors, bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_node(out, tensors, bw)


# -- reductions ----------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if count == 0:
        raise ValueError("mean over an empty axis")
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def max(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first (lowest-index) winner."""
    ax = _norm_axes(axis, a.ndim)[0]
    if a.shape[ax] == 0:
        raise ValueError("max over an empty axis")
    idx = np.argmax(a.data, axis=ax)
    idx_k = np.expand_dims(idx, ax)
    out = np.take_along_axis(a.data, idx_k, axis=ax)
    if not keepdims:
        out = np.squeeze(out, ax)

    def bw(g):
        full = np.zeros_like(a.data)
        gk = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(full, idx_k, gk, axis=ax)
        return (full,)

    return make_node(out, (a,), bw)


def reduce(op: str, a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if op == "sum":
        return sum(a, axis=axis, keepdims=keepdims)
    if op == "mean":
        return mean(a, axis=axis, keepdims=keepdims)
    if op == "max":
        return max(a, axis=-1 if axis is None else axis, keepdims=keepdims)
    raise ValueError(f"unknown reduction {op!r}")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (a,), bw)


def layer_norm(a: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               axis: int = -1, eps: float = 1e-5) -> Tensor:
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[axis]

    def bw(g):
        gx = g
        gg = gb = None
        if gain is not None:
            gg = unbroadcast(g * xhat, gain.shape)
            gx = g * gain.data
        if bias is not None:
            gb = unbroadcast(g, bias.shape)
        dx = inv * (gx - gx.mean(axis=axis, keepdims=True)
                    - xhat * (gx * xhat).sum(axis=axis, keepdims=True) / n)
        return _ln_pack(dx, gg, gb, gain, bias)

    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    parents = [a] + [t for t in (gain, bias) if t is not None]
    return make_node(out, parents, bw)


def _ln_pack(dx, gg, gb, gain, bias):
    grads = [dx]
    if gain is not None:
        grads.append(gg)
    if bias is not None:
        grads.append(gb)
    return tuple(grads)


# -- contractions --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner extents differ ({a.shape[-1]} vs {b.shape[-2]})")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            # shared weight: fold all leading axes into one GEMM
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_node(out, (a, b), bw)


_SPEC_RE = re.compile(r"^([a-zA-Z]*),([a-zA-Z]*)->([a-zA-Z]*)$")


def parse_contraction(spec: str) -> tuple[str, str, str]:
    m = _SPEC_RE.match(spec.replace(" ", ""))
    if not m:
        raise ValueError(f"bad contraction descriptor {spec!r}; expected 'ab,bc->ac' form")
    sa, sb, so = m.groups()
    for s, what in ((sa, "first operand"), (sb, "second operand"), (so, "output")):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated axis label in {what} of {spec!r}")
    for c in so:
        if c not in sa and c not in sb:
            raise ValueError(f"output axis {c!r} absent from both operands in {spec!r}")
    for c in sa:
        if c not in sb and c not in so:
            raise ValueError(f"axis {c!r} of first operand is summed alone; sum it explicitly first")
    for c in sb:
        if c not in sa and c not in so:
            raise ValueError(f"axis {c!r} of second operand is summed alone; sum it explicitly first")
    return sa, sb, so


def contract_batched(a, b, spec: str) -> Tensor:
    """Two-operand einsum-style contraction, e.g. ``"bnk,brk->bnr"``."""
    a, b = _pair(a, b)
    sa, sb, so = parse_contraction(spec)
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise ValueError(
            f"descriptor {spec!r} expects {len(sa)}-d and {len(sb)}-d operands, "
            f"got {a.ndim}-d and {b.ndim}-d"
        )
    extents: dict[str, int] = {}
    for labels, shape in ((sa, a.shape), (sb, b.shape)):
        for c, n in zip(labels, shape):
            if c in extents and extents[c] != n:
                raise ValueError(f"extent mismatch on axis {c!r}: {extents[c]} vs {n}")
            extents[c] = n
    out = _bmm_contract(sa, sb, so, a.data, b.data)

    def bw(g):
        ga = _bmm_contract(so, sb, sa, g, b.data)
        gb = _bmm_contract(so, sa, sb, g, a.data)
        return ga, gb

    return make_node(out, (a, b), bw)


def _bmm_contract(sa: str, sb: str, so: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Evaluate a two-operand contraction as one batched matmul.

    Labels split into batch (both operands and output), left-free, right-free
    and contracted groups; operands are permuted to (batch, left, contracted)
    and (batch, contracted, right) so the heavy lifting goes through BLAS.
    """
    batch = [c for c in so if c in sa and c in sb]
    left = [c for c in so if c in sa and c not in sb]
    right = [c for c in so if c in sb and c not in sa]
    summed = [c for c in sa if c in sb and c not in so]
    ext = dict(zip(sa, a.shape))
    ext.update(zip(sb, b.shape))

    def size(labels):
        return int(np.prod([ext[c] for c in labels])) if labels else 1

    pa = a.transpose([sa.index(c) for c in batch + left + summed])
    pb = b.transpose([sb.index(c) for c in batch + summed + right])
    am = pa.reshape(size(batch), size(left), size(summed))
    bm = pb.reshape(size(batch), size(summed), size(right))
    res = np.matmul(am, bm).reshape([ext[c] for c in batch + left + right])
    order = batch + left + right
    return np.ascontiguousarray(res.transpose([order.index(c) for c in so]))


def naive_contract(a: np.ndarray, b: np.ndarray, spec: str) -> np.ndarray:
    """Nested-loop reference for :func:`contract_batched` (slow; tests only)."""
    sa, sb, so = parse_contraction(spec)
    extents = dict(zip(sa, a.shape))
    extents.update(zip(sb, b.shape))
    labels = sorted(set(sa) | set(sb))
    out = np.zeros([extents[c] for c in so], dtype=np.result_type(a, b))
    ranges = [builtins.range(extents[c]) for c in labels]
    for combo in itertools.product(*ranges):
        env = dict(zip(labels, combo))
        ia = tuple(env[c] for c in sa)
        ib = tuple(env[c] for c in sb)
        io = tuple(env[c] for c in so)
        out[io] += a[ia] * b[ib]
    return out
