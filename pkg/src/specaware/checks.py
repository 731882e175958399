"""Finite-difference gradient suite over every differentiable building block.

Each case builds a small float64 problem, wraps its inputs as parameters and
reduces the output to a scalar with a fixed random projection, so every
output entry contributes to the checked gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import LossConfig, ModelConfig
from .content import ContentEncoder, condition_fuse, dual_pool
from .hyper import HyperNet, factorized_embed, unfold_patches
from .layers import MLP, Attention, Linear, TransformerBlock
from .losses import charbonnier, sam_loss, total_loss
from .mae import SpecAwareMAE, batch_masking, hyperlinear_reconstruct
from .meta import CFF, MetaEncoder, TextEmbeddingProvider
from .numerics import ops
from .numerics.gradcheck import GradCheckReport, finite_diff_check
from .numerics.tensor import Parameter, Tensor
from .sensors import uniform_sensor

F64 = np.float64


@dataclass
class CheckCase:
    name: str
    build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Parameter]]]
    heavy: bool = False


def _param(rng, *shape, positive=False, name=None):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Parameter(x, dtype=F64, name=name)


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    w = Tensor(rng.normal(size=out.shape))
    return lambda t: ops.sum(t * w)


def _unary(fn, positive=False):
    def build(rng):
        x = _param(rng, 3, 4, positive=positive, name="x")
        proj = _project(fn(x), rng)
        return (lambda: proj(fn(x))), [x]
    return build


def _binary(fn, positive_b=False):
    def build(rng):
        a = _param(rng, 3, 4, name="a")
        b = _param(rng, 1, 4, positive=positive_b, name="b")  # broadcasts
        proj = _project(fn(a, b), rng)
        return (lambda: proj(fn(a, b))), [a, b]
    return build


def _module_case(make, in_shape):
    def build(rng):
        mod = make(rng)
        mod.astype(F64)
        x = _param(rng, *in_shape, name="x")
        proj = _project(mod(x), rng)
        return (lambda: proj(mod(x))), [x] + mod.parameters()
    return build


def _toy_sensor(c: int, rng: np.random.Generator):
    start = float(rng.uniform(400, 900))
    return uniform_sensor("toy", "L1", c, start, start + 60.0 * c, fwhm_nm=float(rng.uniform(5, 15)))


def _meta_case(rng):
    provider = TextEmbeddingProvider.hashed_only(12)
    enc = MetaEncoder(16, rng, provider_dim=12, layers=1, heads=2, dtype=F64)
    spec = _toy_sensor(4, rng)
    run = lambda: enc(spec, provider, batch=2).values  # noqa: E731
    proj = _project(run(), rng)
    return (lambda: proj(run())), enc.parameters()


def _content_case(rng):
    enc = ContentEncoder((4, 4), 16, rng, dtype=F64)
    x = _param(rng, 2, 3, 16, 16, name="x")
    proj = _project(enc(x, 4), rng)
    return (lambda: proj(enc(x, 4))), [x] + enc.parameters()


def _dual_pool_case(rng):
    x = _param(rng, 2, 3, 8, 8, name="x")

    def run():
        a, m = dual_pool(x, 4)
        return ops.concat([a, m], axis=-1)
    proj = _project(run(), rng)
    return (lambda: proj(run())), [x]


def _fuse_case(rng):
    cff = CFF(8, 8, 8, rng, dtype=F64)
    a = _param(rng, 2, 3, 8, name="e_meta")
    b = _param(rng, 2, 3, 8, name="e_content")
    run = lambda: condition_fuse(a, b, cff, "both")  # noqa: E731
    proj = _project(run(), rng)
    return (lambda: proj(run())), [a, b] + cff.parameters()


def _factorized_case(rng):
    net = HyperNet(8, 10, 6, 16, 2, rng, dtype=F64)
    e = _param(rng, 2, 3, 8, name="e")
    x = _param(rng, 2, 3, 16, 16, name="x")

    def run():
        return factorized_embed(unfold_patches(x, 4), net(e))
    proj = _project(run(), rng)
    return (lambda: proj(run())), [e, x] + net.parameters()


def _hyperlinear_case(rng):
    net = HyperNet(8, 10, 16, 6, 2, rng, dtype=F64)
    e = _param(rng, 2, 3, 8, name="e")
    lat = _param(rng, 2, 5, 6, name="latents")
    run = lambda: hyperlinear_reconstruct(lat, net(e))  # noqa: E731
    proj = _project(run(), rng)
    return (lambda: proj(run())), [e, lat] + net.parameters()


def _charbonnier_case(rng):
    x = rng.normal(size=(2, 3, 4))
    y = _param(rng, 2, 3, 4, name="x_hat")
    return (lambda: charbonnier(x, y, 1e-3)), [y]


def _sam_case(rng):
    x = rng.normal(size=(2, 5, 6))
    y = _param(rng, 2, 5, 6, name="x_hat")
    return (lambda: sam_loss(x, y, axis=-1)), [y]


def _total_loss_case(rng):
    target = rng.normal(size=(2, 4, 3, 16))
    y = _param(rng, 2, 4, 3, 16, name="recon")
    masked = np.zeros((2, 4), dtype=bool)
    masked[:, :3] = True
    return (lambda: total_loss(target, y, LossConfig(), masked).total), [y]


def end_to_end_case(channels: int = 4, seed: int = 0):
    """Masked reconstruction objective of a toy model at H = W = 16."""
    def build(rng):
        cfg = ModelConfig.toy(seed=seed)
        model = SpecAwareMAE(cfg, TextEmbeddingProvider.hashed_only(cfg.provider_dim), dtype=F64)
        spec = _toy_sensor(channels, rng)
        cube = rng.normal(size=(2, channels, 16, 16))
        masks = batch_masking(2, cfg.tokens, 0.75, np.random.default_rng(seed))

        def run():
            out = model.forward_mim(cube, spec, masks=masks)
            return total_loss(out.target, out.reconstruction, LossConfig(), out.masks.mask()).total
        return run, model.parameters()
    return build


def gradcheck_cases() -> list[CheckCase]:
    cases = [
        CheckCase("add", _binary(ops.add)),
        CheckCase("sub", _binary(ops.sub)),
        CheckCase("mul", _binary(ops.mul)),
        CheckCase("div", _binary(ops.div, positive_b=True)),
        CheckCase("neg", _unary(ops.neg)),
        CheckCase("sqrt", _unary(ops.sqrt, positive=True)),
        CheckCase("exp", _unary(ops.exp)),
        CheckCase("log", _unary(ops.log, positive=True)),
        CheckCase("cos", _unary(ops.cos)),
        CheckCase("sin", _unary(ops.sin)),
        CheckCase("tanh", _unary(ops.tanh)),
        CheckCase("relu", _unary(ops.relu)),
        CheckCase("gelu", _unary(ops.gelu)),
        CheckCase("square", _unary(ops.square)),
        CheckCase("reshape", _unary(lambda t: ops.reshape(t, (4, 3)))),
        CheckCase("transpose", _unary(lambda t: ops.transpose(t, (1, 0)))),
        CheckCase("getitem", _unary(lambda t: t[np.array([0, 2, 0]), 1:3])),
        CheckCase("broadcast_to", _unary(lambda t: ops.broadcast_to(ops.reshape(t, (1, 3, 4)), (2, 3, 4)))),
        CheckCase("concat", _binary(lambda a, b: ops.concat([a, b], axis=0))),
        CheckCase("stack", _unary(lambda t: ops.stack([t, t * 2.0], axis=1))),
        CheckCase("sum", _unary(lambda t: ops.sum(t, axis=0))),
        CheckCase("mean", _unary(lambda t: ops.mean(t, axis=1, keepdims=True))),
        CheckCase("max", _unary(lambda t: ops.max(t, axis=1))),
        CheckCase("softmax", _unary(lambda t: ops.softmax(t, axis=-1))),
        CheckCase("log_softmax", _unary(lambda t: ops.log_softmax(t, axis=0))),
        CheckCase("layer_norm", _binary(lambda a, b: ops.layer_norm(a, b.reshape(4), b.reshape(4) * 0.5))),
        CheckCase("matmul", _binary(lambda a, b: ops.matmul(a, ops.transpose(b, (1, 0)) * b))),
        CheckCase("contract_batched", _contract_case),
        CheckCase("linear", _module_case(lambda r: Linear(4, 3, r), (2, 5, 4))),
        CheckCase("mlp", _module_case(lambda r: MLP([4, 6, 3], r), (5, 4))),
        CheckCase("attention", _module_case(lambda r: Attention(8, 2, r), (2, 5, 8))),
        CheckCase("transformer_block", _module_case(lambda r: TransformerBlock(8, 2, r, 2.0), (2, 5, 8))),
        CheckCase("dual_pool", _dual_pool_case),
        CheckCase("meta_encoder", _meta_case),
        CheckCase("content_encoder", _content_case),
        CheckCase("condition_fusion", _fuse_case),
        CheckCase("factorized_embed", _factorized_case),
        CheckCase("hyperlinear_reconstruct", _hyperlinear_case),
        CheckCase("charbonnier", _charbonnier_case),
        CheckCase("sam_loss", _sam_case),
        CheckCase("total_loss", _total_loss_case),
    ]
    for c in (2, 4, 6):
        cases.append(CheckCase(f"end_to_end_C{c}", end_to_end_case(c), heavy=True))
    return cases


def _contract_case(rng):
    a = _param(rng, 2, 3, 4, name="a")
    b = _param(rng, 2, 4, 5, name="b")
    fn = lambda: ops.contract_batched(a, b, "bij,bjk->bik")  # noqa: E731
    proj = _project(fn(), rng)
    return (lambda: proj(fn())), [a, b]


def run_gradcheck(full: bool = False, seed: int = 0, h: float = 1e-5, tolerance: float = 1e-4,
                  sample: int = 6) -> dict[str, GradCheckReport]:
    """Run every case; heavy cases sample ``sample`` entries per block unless ``full``."""
    reports = {}
    for i, case in enumerate(gradcheck_cases()):
        rng = np.random.default_rng([seed, i])
        fn, params = case.build(rng)
        max_entries = None if (full or not case.heavy) else sample
        reports[case.name] = finite_diff_check(fn, params, h=h, tolerance=tolerance,
                                               max_entries=max_entries, seed=seed)
    return reports
