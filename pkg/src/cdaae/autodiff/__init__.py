"""Reverse-mode autodiff core with the layers the CDAAE networks need."""

from .gradcheck import gradient_check
from .layers import (
    batchnorm,
    concat,
    conv2d,
    conv_transpose2d,
    cross_entropy,
    dense,
    mse,
    one_hot,
    relu,
    safe_log,
    sigmoid,
    softmax,
    tanh,
)
from .optim import Adam
from .tensor import Parameter, Tensor, backward, no_grad, topo_order

__all__ = [
    "Adam",
    "Parameter",
    "Tensor",
    "backward",
    "batchnorm",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "cross_entropy",
    "dense",
    "gradient_check",
    "mse",
    "no_grad",
    "one_hot",
    "relu",
    "safe_log",
    "sigmoid",
    "softmax",
    "tanh",
    "topo_order",
]
