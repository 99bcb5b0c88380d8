"""ViT-Exp branch heads producing expression logits, and the cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import LabelOutOfRange, MissingClassToken, MissingGrid, ShapeMismatch
from .tensor import LayerNorm, Linear, Module, Tensor, as_tensor, gelu, log_softmax
from .vitbase import TokenSequence

VARIANTS = ("cls_token", "patch_flatten")


@dataclass(frozen=True)
class ExpHeadConfig:
    variant: str = "cls_token"
    num_classes: int = 7
    dim: int = 256
    num_patches: Optional[int] = None  # required by patch_flatten
    hidden: int = 512

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown head variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "patch_flatten" and not self.num_patches:
            raise MissingGrid("patch_flatten head needs num_patches")

    @property
    def input_width(self) -> int:
        if self.variant == "cls_token":
            return self.dim
        return self.num_patches * self.dim


class ExpHead(Module):
    """``cls_token``: LN + linear on the class token.
    ``patch_flatten``: LN, flatten all N*D patch values, linear-GELU-linear.
    """

    def __init__(self, cfg: ExpHeadConfig, rng):
        self.cfg = cfg
        self.norm = LayerNorm(cfg.dim)
        if cfg.variant == "cls_token":
            self.fc = Linear(cfg.dim, cfg.num_classes, rng)
            self.fc1 = self.fc2 = None
        else:
            self.fc = None
            self.fc1 = Linear(cfg.input_width, cfg.hidden, rng)
            self.fc2 = Linear(cfg.hidden, cfg.num_classes, rng)

    def forward(self, seq: TokenSequence) -> Tensor:
        cfg = self.cfg
        if cfg.variant == "cls_token":
            if not seq.has_class_token:
                raise MissingClassToken("cls_token head needs a class token")
            return self.fc(self.norm(seq.tokens[:, 0]))
        if seq.grid is None:
            raise MissingGrid("patch_flatten head needs a token grid")
        patches = seq.patch_tokens()
        b, n, d = patches.shape
        if n * d != cfg.input_width:
            raise ShapeMismatch(f"flattened width {n * d} != head input width {cfg.input_width}")
        flat = self.norm(patches).reshape(b, n * d)
        return self.fc2(gelu(self.fc1(flat)))


def exp_head_param_count(cfg: ExpHeadConfig) -> int:
    n = 2 * cfg.dim
    if cfg.variant == "cls_token":
        return n + cfg.dim * cfg.num_classes + cfg.num_classes
    return n + cfg.input_width * cfg.hidden + cfg.hidden + cfg.hidden * cfg.num_classes + cfg.num_classes


def ce_loss(logits, labels) -> Tensor:
    """Mean cross-entropy of ``softmax(logits)`` ([B,K]) against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"logits {logits.shape} vs {labels.shape[0]} labels")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k}), got {labels.min()}..{labels.max()}")
    picked = log_softmax(logits, axis=-1)[np.arange(labels.size), labels]
    return -picked.mean()
