from . import ops
from .gradcheck import directional_gradcheck, gradcheck, numerical_grad
from .ops import (
    add,
    batchnorm2d,
    bilinear_upsample2x,
    channel_reduce,
    concat_channels,
    conv2d,
    global_pool,
    linear,
    maxpool2d,
    mul_broadcast,
    prelu,
    sigmoid,
)
from .tensor import Tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Tensor", "backward", "no_grad", "is_grad_enabled", "ops", "gradcheck", "directional_gradcheck",
    "numerical_grad",
    "add", "batchnorm2d", "bilinear_upsample2x", "channel_reduce", "concat_channels", "conv2d",
    "global_pool", "linear", "maxpool2d", "mul_broadcast", "prelu", "sigmoid",
]
