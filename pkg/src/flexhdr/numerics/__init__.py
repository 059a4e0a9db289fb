from .tensor import Tensor, as_tensor, backward, gradients, make_result
from .ops import (
    FAULTS,
    absolute,
    activation,
    add,
    bilinear_resample,
    broadcast_to,
    clip,
    concat,
    conv2d,
    div,
    leaky_relu,
    log1p,
    max_axis,
    mean,
    mul,
    pixel_grid,
    pool_streams,
    relu,
    repeat_streams,
    reshape,
    set_max,
    sigmoid,
    spatial_mean,
    stack,
    stop_gradient,
    sub,
    sum_all,
    take,
)
from .optim import ModelState, adam_step
from .gradcheck import GradCheckError, grad_check, grad_check_params
from . import checkpoint
