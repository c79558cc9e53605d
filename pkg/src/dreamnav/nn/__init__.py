"""Minimal neural-network substrate: dense float tensors, reverse-mode
gradients for the handful of ops the models here need, Adam, and the
Gaussian utilities used by the variational encoder.

Not a general autodiff framework. The op set is closed on purpose; see
`dreamnav.nn.tensor` for what exists.
"""

from dreamnav.nn.conv import conv2d, conv2d_transpose
from dreamnav.nn.gradcheck import grad_check
from dreamnav.nn.params import ParamStore, adam_step, kaiming_uniform
from dreamnav.nn.tensor import (
    Tensor,
    activation,
    add,
    backward,
    bce_with_logits,
    concat,
    exp,
    kl_diag_gaussian,
    leaky_relu,
    linear,
    log,
    matmul,
    mean,
    mse,
    mul,
    no_grad,
    relu,
    reparameterize,
    reshape,
    sigmoid,
    square,
    stop_gradient,
    sub,
    sum_,
    take_rows,
    tanh,
)

__all__ = [
    "ParamStore",
    "Tensor",
    "activation",
    "adam_step",
    "add",
    "backward",
    "bce_with_logits",
    "concat",
    "conv2d",
    "conv2d_transpose",
    "exp",
    "grad_check",
    "kaiming_uniform",
    "kl_diag_gaussian",
    "leaky_relu",
    "linear",
    "log",
    "matmul",
    "mean",
    "mse",
    "mul",
    "no_grad",
    "relu",
    "reparameterize",
    "reshape",
    "sigmoid",
    "square",
    "stop_gradient",
    "sub",
    "sum_",
    "take_rows",
    "tanh",
]
