"""Array kernel: reverse-mode differentiation plus finite-difference checking."""

from .engine import (
    DiffArray,
    add,
    array_sum,
    concat,
    constant,
    cross_entropy,
    div,
    exp,
    gather_rows,
    gather_tokens,
    gelu,
    grad_enabled,
    l2_normalize,
    layer_norm,
    log,
    matmul,
    mean,
    mse,
    mul,
    neg,
    no_grad,
    parameter,
    reshape,
    scatter_tokens,
    slice_axis,
    softmax,
    sub,
    swapaxes,
    transpose,
)
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "DiffArray",
    "GradCheckReport",
    "add",
    "array_sum",
    "concat",
    "constant",
    "cross_entropy",
    "div",
    "exp",
    "gather_rows",
    "gather_tokens",
    "gelu",
    "grad_check",
    "grad_enabled",
    "l2_normalize",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mse",
    "mul",
    "neg",
    "no_grad",
    "parameter",
    "reshape",
    "scatter_tokens",
    "slice_axis",
    "softmax",
    "sub",
    "swapaxes",
    "transpose",
]
