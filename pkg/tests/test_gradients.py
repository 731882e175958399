"""Central-difference checks (f64, h = 1e-5, tolerance 1e-4) for every block."""

import numpy as np
import pytest

from specaware.checks import end_to_end_case, gradcheck_cases
from specaware.numerics import backward
from specaware.numerics.gradcheck import finite_diff_check

CASES = [c for c in gradcheck_cases() if not c.heavy]
PRIMITIVES = {"add", "sub", "mul", "div", "neg", "sqrt", "exp", "log", "cos", "sin", "tanh", "relu", "gelu",
              "square", "reshape", "transpose", "getitem", "broadcast_to", "concat", "stack", "sum", "mean",
              "max", "softmax", "log_softmax", "layer_norm", "matmul", "contract_batched", "charbonnier",
              "sam_loss"}


def _check(case, seed, **kw):
    fn, params = case.build(np.random.default_rng([seed, 17]))
    return finite_diff_check(fn, params, h=1e-5, tolerance=1e-4, seed=seed, **kw)


@pytest.mark.parametrize("case", [c for c in CASES if c.name in PRIMITIVES], ids=lambda c: c.name)
def test_primitive_over_100_seeds(case):
    worst = max(_check(case, s).max_rel_err for s in range(100))
    assert worst < 1e-4


@pytest.mark.parametrize("case", [c for c in CASES if c.name not in PRIMITIVES], ids=lambda c: c.name)
def test_module_over_seeds(case):
    for s in range(3):
        rep = _check(case, s)
        assert rep.passed, rep.summary()


@pytest.mark.parametrize("channels", [2, 6])
def test_end_to_end_masked_objective_sampled(channels):
    fn, params = end_to_end_case(channels)(np.random.default_rng(channels))
    rep = finite_diff_check(fn, params, max_entries=2, seed=channels)
    assert rep.passed, "\n".join(b.name + " " + b.status for b in rep.worst())


def test_end_to_end_32_random_weights():
    fn, params = end_to_end_case(4, seed=5)(np.random.default_rng(9))
    for p in params:
        p.zero_grad()
    backward(fn(), params)
    rng = np.random.default_rng(0)
    sizes = np.array([p.size for p in params])
    picks = rng.choice(sizes.sum(), size=32, replace=False)
    owners = np.searchsorted(np.cumsum(sizes), picks, side="right")
    offsets = picks - np.concatenate([[0], np.cumsum(sizes)])[owners]
    h = 1e-5
    for o, j in zip(owners, offsets):
        flat = params[o].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        fp = fn().item()
        flat[j] = orig - h
        fm = fn().item()
        flat[j] = orig
        numeric = (fp - fm) / (2 * h)
        analytic = params[o].grad.reshape(-1)[j]
        assert abs(numeric - analytic) <= 1e-4 * max(abs(numeric), abs(analytic), 1e-6), params[o].name
