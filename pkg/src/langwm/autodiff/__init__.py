"""Differentiable numeric core: tensors, ops, optimizer, gradient checker."""

from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, ParamStore
from .tensor import (
    Tensor,
    add,
    concat,
    constant,
    conv2d,
    conv_transpose2d,
    debug_checks,
    default_dtype,
    div,
    embedding,
    exp,
    gather_last,
    getitem,
    layer_norm,
    log,
    log_softmax,
    matmul,
    maximum,
    mean,
    mul,
    no_grad,
    precision,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    silu,
    softmax,
    softplus,
    sqrt,
    square,
    stop_gradient,
    sub,
    sum_,
    tanh,
    transpose,
)
from .conv import BACKEND as CONV_BACKEND

__all__ = [
    "Adam",
    "CONV_BACKEND",
    "GradCheckReport",
    "ParamStore",
    "Tensor",
    "add",
    "concat",
    "constant",
    "conv2d",
    "conv_transpose2d",
    "debug_checks",
    "default_dtype",
    "div",
    "embedding",
    "exp",
    "gather_last",
    "getitem",
    "grad_check",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "maximum",
    "mean",
    "mul",
    "no_grad",
    "precision",
    "relu",
    "reshape",
    "set_default_dtype",
    "sigmoid",
    "silu",
    "softmax",
    "softplus",
    "sqrt",
    "square",
    "stop_gradient",
    "sub",
    "sum_",
    "tanh",
    "transpose",
]
