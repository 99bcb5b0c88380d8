"""Pure numpy kernels; the fallback when the compiled extension is absent."""

import numpy as np


def dwconv3x3_forward(x, k):
    """Depthwise 3x3 cross-correlation, zero padding 1. x: [B,C,H,W], k: [C,3,3]."""
    _, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            out += k[None, :, di, dj, None, None] * xp[:, :, di:di + h, dj:dj + w]
    return out


def dwconv3x3_backward(g, x, k):
    """Return (grad wrt x, grad wrt k) for :func:`dwconv3x3_forward`."""
    _, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gxp = np.zeros_like(xp)
    gk = np.empty_like(k)
    for di in range(3):
        for dj in range(3):
            gxp[:, :, di:di + h, dj:dj + w] += k[None, :, di, dj, None, None] * g
            gk[:, di, dj] = np.einsum("bchw,bchw->c", g, xp[:, :, di:di + h, dj:dj + w])
    return gxp[:, :, 1:-1, 1:-1].copy(), gk
