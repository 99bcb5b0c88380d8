"""Multi-stage transformer blocks: 2x2 patch merging and the convolutional FFN.

After k merges a (Hf, Wf, Cf) input has extents (Hf/2^k, Wf/2^k, 2^k*Cf):
each merge concatenates 2x2 neighbours (4C) and projects to 2C.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingGrid, OddGrid, ShapeMismatch
from .tensor import LayerNorm, Linear, Module, Parameter, depthwise_conv2d, gelu
from .vitbase import MHSA, TokenSequence


@dataclass(frozen=True)
class StageConfig:
    stages: tuple = (2, 2)
    base_dims: tuple = (14, 14, 256)

    def __post_init__(self):
        h, w, _ = self.base_dims
        merges = len(self.stages) - 1
        if h % (1 << merges) or w % (1 << merges):
            raise OddGrid(f"{h}x{w} cannot be halved {merges} times")

    def dims_after(self, k: int) -> tuple:
        """Feature extents after ``k`` merges."""
        h, w, c = self.base_dims
        return h >> k, w >> k, c << k


def _require_grid(seq: TokenSequence, what: str) -> tuple:
    if seq.grid is None:
        raise MissingGrid(f"{what} needs a token grid")
    if seq.prefix:
        raise ShapeMismatch(f"{what} does not support class/extra tokens")
    return seq.grid


class PatchMerge(Module):
    """Concatenate each 2x2 token neighbourhood (row-major order) and project 4D -> 2D."""

    def __init__(self, dim: int, rng):
        self.dim = dim
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, seq: TokenSequence) -> TokenSequence:
        r, c = _require_grid(seq, "patch_merge")
        if r % 2 or c % 2:
            raise OddGrid(f"cannot merge an odd grid {r}x{c}")
        x = seq.tokens
        b, _, d = x.shape
        merged = (x.reshape(b, r // 2, 2, c // 2, 2, d)
                   .transpose(0, 1, 3, 2, 4, 5)
                   .reshape(b, (r // 2) * (c // 2), 4 * d))
        return TokenSequence(self.reduction(merged), (r // 2, c // 2), False, 0)


class ConvFFN(Module):
    """x + restore(GELU(dwconv3x3(expand(LN(x))))) on the token lattice."""

    def __init__(self, dim: int, expand_ratio: int, rng):
        hidden = dim * expand_ratio
        self.norm = LayerNorm(dim)
        self.expand = Linear(dim, hidden, rng)
        self.dw_kernel = Parameter(rng.standard_normal((hidden, 3, 3)) / 3.0)
        self.dw_bias = Parameter(np.zeros(hidden))
        self.restore = Linear(hidden, dim, rng)

    def branch(self, seq: TokenSequence):
        """The residual branch alone (no skip connection)."""
        r, c = _require_grid(seq, "conv_ffn")
        x = seq.tokens
        b, n, _ = x.shape
        h = self.expand(self.norm(x))
        hidden = h.shape[-1]
        lattice = h.reshape(b, r, c, hidden).transpose(0, 3, 1, 2)
        conv = gelu(depthwise_conv2d(lattice, self.dw_kernel, self.dw_bias))
        flat = conv.transpose(0, 2, 3, 1).reshape(b, n, hidden)
        return self.restore(flat)

    def forward(self, seq: TokenSequence) -> TokenSequence:
        return seq.with_tokens(seq.tokens + self.branch(seq))


class MultiStageBlock(Module):
    """x + MHSA(LN(x)) followed by the Conv-FFN (which carries its own residual)."""

    def __init__(self, dim: int, heads: int, expand_ratio: int, rng):
        self.norm1 = LayerNorm(dim)
        self.mhsa = MHSA(dim, heads, rng)
        self.conv_ffn = ConvFFN(dim, expand_ratio, rng)

    def forward(self, seq: TokenSequence) -> TokenSequence:
        _require_grid(seq, "multistage_block")
        seq = seq.with_tokens(seq.tokens + self.mhsa.attend(self.norm1(seq.tokens)))
        return self.conv_ffn(seq)


class Stage(Module):
    """An optional leading merge followed by ``depth`` multi-stage blocks."""

    def __init__(self, dim: int, depth: int, heads: int, expand_ratio: int, rng, merge: bool):
        self.merge = PatchMerge(dim, rng) if merge else None
        out_dim = 2 * dim if merge else dim
        self.blocks = [MultiStageBlock(out_dim, heads, expand_ratio, rng) for _ in range(depth)]
        self.out_dim = out_dim

    def forward(self, seq: TokenSequence) -> TokenSequence:
        if self.merge is not None:
            seq = self.merge(seq)
        for block in self.blocks:
            seq = block(seq)
        return seq


def build_stages(cfg: StageConfig, heads: int, expand_ratio: int, rng) -> list:
    """Stages with a merge at every boundary; heads double with the width."""
    stages = []
    dim = cfg.base_dims[2]
    for k, depth in enumerate(cfg.stages):
        stage = Stage(dim, depth, heads * (1 << k) if k else heads, expand_ratio, rng, merge=k > 0)
        stages.append(stage)
        dim = stage.out_dim
    return stages


def multistage_param_count(cfg: StageConfig, expand_ratio: int) -> int:
    """Closed-form parameter count of :func:`build_stages` output."""
    total = 0
    dim = cfg.base_dims[2]
    for k, depth in enumerate(cfg.stages):
        if k:
            total += 4 * dim * 2 * dim
            dim *= 2
        hidden = expand_ratio * dim
        attn = 4 * (dim * dim + dim)
        ffn = 2 * dim + (dim * hidden + hidden) + 10 * hidden + (hidden * dim + dim)
        total += depth * (2 * dim + attn + ffn)
    return total


def feature_size(base_dims: tuple, k: int) -> tuple:
    h, w, c = base_dims
    return h // (2 ** k), w // (2 ** k), c * (2 ** k)

