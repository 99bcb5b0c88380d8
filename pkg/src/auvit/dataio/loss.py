"""Masked binary cross-entropy for multi-label AU targets."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from ..tensor import Tensor, as_tensor, bce_with_logits


def bce_mask_loss(pred, target, mask) -> Tensor:
    """BCE of ``sigmoid(pred)`` averaged over entries where ``mask`` is 1.

    Returns 0 (with zero gradients) when the mask is empty.
    """
    pred = as_tensor(pred)
    target = np.asarray(getattr(target, "data", target), dtype=np.float64)
    mask = np.asarray(getattr(mask, "data", mask), dtype=np.float64)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ShapeMismatch(f"pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    count = max(float(mask.sum()), 1.0)
    return (bce_with_logits(pred, target) * Tensor(mask)).sum() / count
