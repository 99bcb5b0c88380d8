"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

import numpy as np

from .core import Tensor, no_grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)`` in the 2-norm."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def numerical_grad(fn, tensors, h: float = 1e-5) -> list:
    """Central differences of scalar ``fn()`` with respect to each tensor's data."""
    grads = []
    with no_grad():
        for t in tensors:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * h)
            grads.append(g)
    return grads


def gradcheck(fn, tensors, h: float = 1e-5) -> float:
    """Worst relative error between tape and numerical gradients over ``tensors``.

    ``fn`` takes no arguments and builds a scalar Tensor from ``tensors``
    (which must require grad). Gradients on ``tensors`` are overwritten.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [t.grad.copy() for t in tensors]
    numeric = numerical_grad(fn, tensors, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def random_projection(out: Tensor, weights: np.ndarray) -> Tensor:
    """Reduce ``out`` to a scalar with fixed random weights (avoids degenerate sums)."""
    return (out * Tensor(weights)).sum()
