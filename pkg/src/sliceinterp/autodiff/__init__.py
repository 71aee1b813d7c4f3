from .functional import (
    ShapeError,
    batchnorm2d,
    bce_with_logits,
    channel_concat,
    channel_split,
    conv2d,
    conv_transpose2d,
    l1_loss,
    linear,
    maxpool2d,
    mse_loss,
    softmax_matmul_attention,
)
from .gradcheck import gradcheck
from .tensor import (
    GradTape,
    Tensor,
    concat,
    default_dtype,
    exp,
    grad_enabled,
    leaky_relu,
    log,
    matmul,
    no_grad,
    precision,
    relu,
    sigmoid,
    softmax,
    sqrt,
)
