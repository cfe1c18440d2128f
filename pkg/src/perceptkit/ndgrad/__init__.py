"""Dense-array autodiff substrate: Tensor, operators, layers, optimizer."""

from .tensor import Tensor, as_tensor
from .ops import (
    add,
    avgpool2d,
    batch_norm,
    bilinear_kernel,
    concat,
    conv2d,
    deconv2d,
    gather_rows,
    mul,
    relu,
    reshape,
    resize_bilinear,
    resize_nearest,
    smooth_l1,
    softmax_cross_entropy,
    stop_gradient,
    transpose,
)
from .layers import BatchNorm2d, Conv2d, Deconv2d, Module, Parameter, he_init
from .optim import SGD, sgd_momentum_step
from .gradcheck import check_gradients, numeric_gradient

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "avgpool2d",
    "batch_norm",
    "bilinear_kernel",
    "concat",
    "conv2d",
    "deconv2d",
    "gather_rows",
    "mul",
    "relu",
    "reshape",
    "resize_bilinear",
    "resize_nearest",
    "smooth_l1",
    "softmax_cross_entropy",
    "stop_gradient",
    "transpose",
    "BatchNorm2d",
    "Conv2d",
    "Deconv2d",
    "Module",
    "Parameter",
    "he_init",
    "SGD",
    "sgd_momentum_step",
    "check_gradients",
    "numeric_gradient",
]
