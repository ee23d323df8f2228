"""Dense tensors, reverse-mode differentiation, kernels and seeded randomness."""
from gentron.numerics import kernels
from gentron.numerics.gradcheck import check_gradients, finite_difference, relative_error
from gentron.numerics.rng import Rng, randn
from gentron.numerics.tensor import (
    Tensor,
    add,
    as_tensor,
    attention,
    backward,
    concat,
    div,
    exp,
    gelu,
    getitem,
    is_grad_enabled,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    reshape,
    silu,
    softmax,
    stack,
    sub,
    take,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "Rng", "Tensor", "add", "as_tensor", "attention", "backward", "check_gradients",
    "concat", "div", "exp", "finite_difference", "gelu", "getitem", "is_grad_enabled",
    "kernels", "layer_norm", "linear", "matmul", "mean", "mul", "neg", "no_grad", "power",
    "randn", "relative_error", "reshape", "silu", "softmax", "stack", "sub", "take", "tanh",
    "transpose", "tsum",
]
