"""Base branch: patch / feature-map embedding and standard transformer blocks."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import IndexOutOfRange, ShapeMismatch
from .tensor import (Tensor, LayerNorm, Linear, Module, Parameter, as_tensor, concatenate,
                     gelu, softmax, trunc_normal)


@dataclass(frozen=True)
class PatchEmbedConfig:
    image_size: int = 112
    patch_size: int = 16
    embed_dim: int = 256
    use_class_token: bool = True
    in_channels: int = 3
    extra_tokens: int = 0  # learnable tokens after the class token (AU-token baseline)

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ShapeMismatch(f"image size {self.image_size} not divisible by patch {self.patch_size}")

    @property
    def grid(self) -> tuple:
        side = self.image_size // self.patch_size
        return side, side

    @property
    def num_patches(self) -> int:
        r, c = self.grid
        return r * c

    @property
    def num_prefix(self) -> int:
        return int(self.use_class_token) + self.extra_tokens


@dataclass(frozen=True)
class TransformerBlockConfig:
    dim: int = 256
    heads: int = 8
    mlp_ratio: float = 4.0
    depth: int = 12

    def __post_init__(self):
        if self.dim % self.heads:
            raise ShapeMismatch(f"dim {self.dim} not divisible by {self.heads} heads")


@dataclass
class TokenSequence:
    """Batched tokens ``[B, prefix + rows*cols, D]``.

    ``prefix`` counts the leading non-patch tokens (class token first, then any
    extra learnable tokens); ``grid`` is the patch lattice.
    """

    tokens: Tensor
    grid: Optional[tuple]
    has_class_token: bool = False
    prefix: int = 0

    def __post_init__(self):
        if self.grid is not None:
            r, c = self.grid
            if self.tokens.shape[1] != self.prefix + r * c:
                raise ShapeMismatch(
                    f"{self.tokens.shape[1]} tokens for grid {self.grid} with {self.prefix} prefix tokens")

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[1]

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    def with_tokens(self, tokens: Tensor) -> "TokenSequence":
        return replace(self, tokens=tokens)

    def patch_tokens(self) -> Tensor:
        return self.tokens[:, self.prefix:] if self.prefix else self.tokens


def _batched(x, ndim: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim == ndim - 1:
        x = x.reshape((1,) + x.shape)
    if x.ndim != ndim:
        raise ShapeMismatch(f"expected a {ndim - 1}-d sample or {ndim}-d batch, got {x.shape}")
    return x


class PatchEmbed(Module):
    """Split images into PxP patches, project them linearly, add position embeddings."""

    def __init__(self, cfg: PatchEmbedConfig, rng):
        self.cfg = cfg
        p, d = cfg.patch_size, cfg.embed_dim
        self.proj = Linear(cfg.in_channels * p * p, d, rng)
        self.cls_token = Parameter(trunc_normal(rng, (1, 1, d))) if cfg.use_class_token else None
        self.extra_tokens = Parameter(trunc_normal(rng, (1, cfg.extra_tokens, d))) if cfg.extra_tokens else None
        self.pos_embed = Parameter(trunc_normal(rng, (1, cfg.num_prefix + cfg.num_patches, d)))

    def forward(self, images) -> TokenSequence:
        cfg = self.cfg
        x = _batched(images, 4)
        b, ch, h, w = x.shape
        if ch != cfg.in_channels or h != cfg.image_size or w != cfg.image_size:
            raise ShapeMismatch(f"expected [{cfg.in_channels},{cfg.image_size},{cfg.image_size}] images, got {x.shape[1:]}")
        p = cfg.patch_size
        r, c = cfg.grid
        patches = (x.reshape(b, ch, r, p, c, p)
                    .transpose(0, 2, 4, 1, 3, 5)
                    .reshape(b, r * c, ch * p * p))
        tokens = self.proj(patches)
        lead = []
        if self.cls_token is not None:
            lead.append(_expand(self.cls_token, b))
        if self.extra_tokens is not None:
            lead.append(_expand(self.extra_tokens, b))
        if lead:
            tokens = concatenate(lead + [tokens], axis=1)
        tokens = tokens + self.pos_embed
        return TokenSequence(tokens, (r, c), cfg.use_class_token, cfg.num_prefix)


def _expand(param: Tensor, batch: int) -> Tensor:
    """Repeat a ``[1, n, D]`` parameter along the batch axis (gradients are summed)."""
    if batch == 1:
        return param
    return param * Tensor(np.ones((batch, 1, 1)))


class FeatureEmbed(Module):
    """Treat every feature-map pixel as a 1x1 patch: project C -> D, add positions."""

    def __init__(self, channels: int, height: int, width: int, dim: int, rng):
        self.grid = (height, width)
        self.proj = Linear(channels, dim, rng)
        self.pos_embed = Parameter(trunc_normal(rng, (1, height * width, dim)))

    def forward(self, fmap) -> TokenSequence:
        x = _batched(fmap, 4)
        b, ch, h, w = x.shape
        if (h, w) != self.grid:
            raise ShapeMismatch(f"feature map {h}x{w} does not match embedding grid {self.grid}")
        tokens = x.transpose(0, 2, 3, 1).reshape(b, h * w, ch)
        return TokenSequence(self.proj(tokens) + self.pos_embed, (h, w), False, 0)


class MHSA(Module):
    """Multi-head scaled dot-product self-attention over all tokens."""

    def __init__(self, dim: int, heads: int, rng):
        if dim % heads:
            raise ShapeMismatch(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.record_attention = False
        self.last_attention: Optional[np.ndarray] = None

    def attend(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h = self.heads
        dh = d // h

        def split(z):
            return z.reshape(b, t, h, dh).transpose(0, 2, 1, 3)

        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        attn = softmax(scores, axis=-1)
        if self.record_attention:
            self.last_attention = attn.data.copy()
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.wo(out)

    def forward(self, seq: TokenSequence) -> TokenSequence:
        if seq.dim % self.heads:
            raise ShapeMismatch(f"dim {seq.dim} not divisible by {self.heads} heads")
        return seq.with_tokens(self.attend(seq.tokens))


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: x + MHSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng):
        self.norm1 = LayerNorm(dim)
        self.mhsa = MHSA(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, int(dim * mlp_ratio), rng)

    def forward(self, seq: TokenSequence) -> TokenSequence:
        x = seq.tokens
        x = x + self.mhsa.attend(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return seq.with_tokens(x)


def run_base(seq: TokenSequence, blocks, stop_at: int) -> TokenSequence:
    """Apply ``blocks[0:stop_at]``; ``stop_at`` counts blocks from 1."""
    if not 1 <= stop_at <= len(blocks):
        raise IndexOutOfRange(f"stop_at={stop_at} outside 1..{len(blocks)}")
    for block in blocks[:stop_at]:
        seq = block(seq)
    return seq


def run_blocks(seq: TokenSequence, blocks, start: int = 0) -> TokenSequence:
    for block in blocks[start:]:
        seq = block(seq)
    return seq


# -- CNN embedding stand-ins ---------------------------------------------------

class DownsampleStub(Module):
    """Parameter-free embedding: average-pool by ``factor``, channels unchanged."""

    def __init__(self, factor: int = 1):
        self.factor = factor

    def out_shape(self, in_channels: int, size: int) -> tuple:
        return in_channels, size // self.factor, size // self.factor

    def forward(self, images) -> Tensor:
        x = _batched(images, 4)
        f = self.factor
        if f == 1:
            return x
        b, c, h, w = x.shape
        return x.reshape(b, c, h // f, f, w // f, f).mean(axis=(3, 5))


class ConvStem(Module):
    """Randomly initialised strided-conv stack (kernel 2, stride 2 per stage).

    Each stage rearranges 2x2 pixel blocks into channels and applies a
    pointwise projection plus GELU, halving the spatial size. Three stages
    map 112x112x3 to 14x14x``channels[-1]``.
    """

    def __init__(self, in_channels: int, channels=(64, 128, 256), rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = tuple(channels)
        dims = (in_channels,) + self.channels
        self.stages = [Linear(4 * dims[i], dims[i + 1], rng, std=math.sqrt(2.0 / (4 * dims[i])))
                       for i in range(len(self.channels))]

    def out_shape(self, in_channels: int, size: int) -> tuple:
        return self.channels[-1], size >> len(self.channels), size >> len(self.channels)

    def forward(self, images) -> Tensor:
        x = _batched(images, 4)
        for proj in self.stages:
            b, c, h, w = x.shape
            if h % 2 or w % 2:
                raise ShapeMismatch(f"conv stem needs even extents, got {h}x{w}")
            x = (x.reshape(b, c, h // 2, 2, w // 2, 2)
                  .transpose(0, 2, 4, 1, 3, 5)
                  .reshape(b, h // 2, w // 2, 4 * c))
            x = gelu(proj(x)).transpose(0, 3, 1, 2)
        return x
