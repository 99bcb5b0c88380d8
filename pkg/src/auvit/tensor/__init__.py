"""Float64 tensors with reverse-mode autodiff, layers, optimizers and archives."""

from . import functional
from .core import (
    Tensor,
    add,
    as_tensor,
    concatenate,
    div,
    exp,
    getitem,
    is_grad_enabled,
    log,
    matmul,
    max_,
    maximum,
    mean,
    mul,
    neg,
    no_grad,
    power,
    reshape,
    stack,
    sub,
    sum_,
    transpose,
)
from .functional import (
    bce_with_logits,
    depthwise_conv2d,
    gelu,
    layer_norm,
    log_softmax,
    region_avg_pool,
    sigmoid,
    softmax,
)
from .io import load_archive, save_archive
from .kernels import BACKEND
from .nn import LayerNorm, Linear, Module, Parameter, trunc_normal
from .optim import SGD, Adam


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    loss.backward(retain_graph=retain_graph)
