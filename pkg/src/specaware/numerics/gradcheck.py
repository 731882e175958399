"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward

# below this magnitude a gradient is treated as zero when comparing
ZERO_FLOOR = 1e-6


@dataclass
class BlockResult:
    name: str
    max_rel_err: float
    checked: int
    zero_both: bool = False

    @property
    def status(self) -> str:
        if self.zero_both:
            return "zero analytic, zero numeric"
        return f"max rel err {self.max_rel_err:.3e}"


@dataclass
class GradCheckReport:
    tolerance: float
    blocks: list[BlockResult] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((b.max_rel_err for b in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def flagged(self) -> list[str]:
        return [b.name for b in self.blocks if b.zero_both]

    def worst(self, n: int = 5) -> list[BlockResult]:
        return sorted(self.blocks, key=lambda b: -b.max_rel_err)[:n]

    def summary(self) -> str:
        lines = [f"{b.name}: {b.status} ({b.checked} entries)" for b in self.blocks]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max rel err {self.max_rel_err:.3e} (tol {self.tolerance:g})")
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float, floor: float = ZERO_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare ``backward`` against central differences for every parameter block.

    ``f`` must rebuild the graph on every call and be deterministic. With
    ``max_entries`` set, that many entries per block are sampled at random.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss, params)
    # central differences cannot resolve anything below the cancellation
    # noise of the loss value itself; entries under it on both sides are zeros
    noise = 10.0 * np.finfo(np.float64).eps * max(abs(loss.item()), 1.0) / h
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for i, p in enumerate(params):
        name = (names[i] if names else None) or p.name or f"param{i}"
        flat = p.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            entries = np.arange(flat.size)
        worst = 0.0
        all_zero = True
        for j in entries:
            orig = flat[j]
            flat[j] = orig + h
            fp = f().item()
            flat[j] = orig - h
            fm = f().item()
            flat[j] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic[i].reshape(-1)[j])
            if max(abs(ana), abs(num)) <= noise:
                continue
            all_zero = False
            worst = max(worst, relative_error(ana, num))
        report.blocks.append(BlockResult(name, worst, len(entries), zero_both=all_zero))
    return report
