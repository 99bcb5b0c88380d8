"""Neural-network ops with hand-written backward rules."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

from ..errors import ShapeMismatch
from . import kernels
from .core import DTYPE, Tensor, as_tensor, make_result, unbroadcast

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = expit(x.data)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_result(xd * cdf, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(f"layer_norm affine shapes {gamma.shape}/{beta.shape} for width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv_std * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(out, (x, gamma, beta), backward)


def depthwise_conv2d(x, kernels_, bias=None, padding: int = 1, stride: int = 1) -> Tensor:
    """Per-channel 3x3 convolution of ``x`` ([C,H,W] or [B,C,H,W]).

    Only the shape-preserving configuration (padding 1, stride 1) is supported.
    """
    if padding != 1 or stride != 1:
        raise ValueError("depthwise_conv2d supports padding=1, stride=1 only")
    x, k = as_tensor(x), as_tensor(kernels_)
    if k.ndim != 3 or k.shape[1:] != (3, 3):
        raise ShapeMismatch(f"kernels must be [C,3,3], got {k.shape}")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or xd.shape[1] != k.shape[0]:
        raise ShapeMismatch(f"input {x.shape} does not match {k.shape[0]} kernels")
    xd = np.ascontiguousarray(xd)
    kd = np.ascontiguousarray(k.data)
    out = kernels.dwconv3x3_forward(xd, kd)
    parents = [x, k]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (k.shape[0],):
            raise ShapeMismatch(f"bias shape {bias.shape} for {k.shape[0]} channels")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    if unbatched:
        out = out[0]

    def backward(g):
        gb = g[None] if unbatched else g
        gb = np.ascontiguousarray(gb)
        gx, gk = kernels.dwconv3x3_backward(gb, xd, kd)
        grads = [gx[0] if unbatched else gx, gk]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_result(np.asarray(out), parents, backward)


def region_avg_pool(x, rows: slice, cols: slice) -> Tensor:
    """Average the last two axes of ``x`` over the rectangle ``rows`` x ``cols``."""
    x = as_tensor(x)
    window = x.data[..., rows, cols]
    count = window.shape[-1] * window.shape[-2]
    if count == 0:
        raise ShapeMismatch("empty pooling window")
    shape = x.shape

    def backward(g):
        grad = np.zeros(shape, dtype=DTYPE)
        grad[..., rows, cols] = (g / count)[..., None, None]
        return (grad,)

    return make_result(window.mean(axis=(-2, -1)), (x,), backward)


def bce_with_logits(logits, target) -> Tensor:
    """Elementwise binary cross-entropy of ``sigmoid(logits)`` against ``target``."""
    z, y = as_tensor(logits), as_tensor(target)
    zd, yd = z.data, y.data
    out = np.maximum(zd, 0.0) - zd * yd + np.log1p(np.exp(-np.abs(zd)))

    def backward(g):
        return unbroadcast(g * (expit(zd) - yd), zd.shape), None

    return make_result(out, (z, y), backward)


def linear(x, weight, bias=None) -> Tensor:
    out = x @ weight
    return out if bias is None else out + bias
