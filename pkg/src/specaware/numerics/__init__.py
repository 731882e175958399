from . import ops
from .gradcheck import GradCheckReport, finite_diff_check, relative_error
from .ops import (
    concat,
    contract_batched,
    elementwise,
    gelu,
    layer_norm,
    matmul,
    reduce,
    softmax,
)
from .tensor import BackwardReport, Parameter, Tape, Tensor, backward, no_grad

__all__ = [
    "BackwardReport", "GradCheckReport", "Parameter", "Tape", "Tensor",
    "backward", "concat", "contract_batched", "elementwise", "finite_diff_check",
    "gelu", "layer_norm", "matmul", "no_grad", "ops", "reduce", "relative_error",
    "softmax",
]
