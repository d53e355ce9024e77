from .tensor import (
    Tensor,
    Parameter,
    no_grad,
    relu,
    sigmoid,
    conv2d,
    maxpool2,
    upsample_nearest2,
    concat_channels,
    slice_channels,
    instance_norm,
    assert_finite,
)
from .optim import Adam
from .gradcheck import grad_check, GradCheckReport

__all__ = [
    "Tensor", "Parameter", "no_grad", "relu", "sigmoid", "conv2d", "maxpool2",
    "upsample_nearest2", "concat_channels", "slice_channels", "instance_norm",
    "assert_finite", "Adam", "grad_check", "GradCheckReport",
]
