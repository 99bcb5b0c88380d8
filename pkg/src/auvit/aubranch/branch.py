"""AU branch: Seq2Img, region cropping, patch average pooling, per-region heads
and symmetric maxout over mirrored regions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyRegion, MissingGrid, ShapeMismatch, UnassignedAu
from ..tensor import (LayerNorm, Linear, Module, Tensor, as_tensor, concatenate, maximum,
                      region_avg_pool)
from ..vitbase import TokenSequence
from .schemes import Region, RegionScheme


@dataclass
class AuPrediction:
    logits: Tensor  # [B, |vocab|]
    per_region_logits: dict = field(default_factory=dict)


def seq2img(seq: TokenSequence) -> Tensor:
    """Lay patch tokens back on their grid: ``[B, N, D] -> [B, D, rows, cols]``."""
    if seq.grid is None:
        raise MissingGrid("seq2img needs a token grid")
    r, c = seq.grid
    x = seq.patch_tokens()
    b, n, d = x.shape
    return x.reshape(b, r, c, d).transpose(0, 3, 1, 2)


def img2seq(fmap: Tensor) -> Tensor:
    b, d, r, c = fmap.shape
    return fmap.transpose(0, 2, 3, 1).reshape(b, r * c, d)


def crop_region(fmap, region: Region) -> Tensor:
    fmap = as_tensor(fmap)
    rows, cols = region.cells(fmap.shape[-2], fmap.shape[-1])
    return fmap[..., rows, cols]


def symmetric_maxout(left, right) -> Tensor:
    """Elementwise max of mirrored predictions; ties send the gradient left."""
    left, right = as_tensor(left), as_tensor(right)
    if left.shape != right.shape:
        raise ShapeMismatch(f"maxout sides differ: {left.shape} vs {right.shape}")
    return maximum(left, right)


class AUBranch(Module):
    """Region heads over a feature map, assembled into vocabulary-ordered AU logits.

    A region and its mirror share one linear head. Each AU's logit is the max
    over the regions that emit it, which for a mirrored pair is the symmetric
    maxout of the left and right predictions.
    """

    def __init__(self, scheme: RegionScheme, vocab, dim: int, rng):
        self.scheme = scheme
        self.vocab = vocab
        self.groups = []  # (head name, [regions], [AU codes])
        for region in scheme.regions:
            if region.mirror_of:
                continue
            aus = [a for a in region.assigned_aus if a in vocab]
            if not aus:
                continue
            members = [region] + [r for r in scheme.regions if r.mirror_of == region.name]
            self.groups.append((region.name, members, aus))
        missing = [a for a in vocab if not any(a in g[2] for g in self.groups)]
        if missing:
            raise UnassignedAu(f"scheme {scheme.name} assigns no region to {missing}")
        self.heads = {name: Linear(dim, len(aus), rng) for name, _, aus in self.groups}

        # column gathers: every vocab AU takes its first emitting column, then
        # folds in further emitting columns with max
        offsets, start = {}, 0
        for name, _, aus in self.groups:
            offsets[name] = start
            start += len(aus)
        sources = {a: [] for a in vocab}
        for name, _, aus in self.groups:
            for j, a in enumerate(aus):
                sources[a].append(offsets[name] + j)
        depth = max(len(v) for v in sources.values())
        self._gathers = [np.array([sources[a][min(k, len(sources[a]) - 1)] for a in vocab], dtype=np.intp)
                         for k in range(depth)]

    def pooled(self, fmap: Tensor, region: Region) -> Tensor:
        rows, cols = region.cells(fmap.shape[-2], fmap.shape[-1])
        return region_avg_pool(fmap, rows, cols)

    def forward(self, fmap) -> AuPrediction:
        fmap = as_tensor(fmap)
        if fmap.ndim == 3:
            fmap = fmap.reshape((1,) + fmap.shape)
        per_region = {}
        group_out = []
        for name, members, _ in self.groups:
            head = self.heads[name]
            outs = []
            for region in members:
                z = head(self.pooled(fmap, region))
                per_region[region.name] = z
                outs.append(z)
            z = outs[0]
            for other in outs[1:]:
                z = symmetric_maxout(z, other)
            group_out.append(z)
        flat = concatenate(group_out, axis=1) if len(group_out) > 1 else group_out[0]
        logits = flat[:, self._gathers[0]]
        for idx in self._gathers[1:]:
            logits = maximum(logits, flat[:, idx])
        return AuPrediction(logits, per_region)


def au_branch_param_count(scheme: RegionScheme, vocab, dim: int) -> int:
    total = 0
    for region in scheme.regions:
        if region.mirror_of:
            continue
        n = sum(1 for a in region.assigned_aus if a in vocab)
        if n:
            total += dim * n + n
    return total


class AUTokenHead(Module):
    """Baseline: a learnable AU token read out by LN + linear."""

    def __init__(self, dim: int, vocab_size: int, rng, token_index: int = 1):
        self.norm = LayerNorm(dim)
        self.fc = Linear(dim, vocab_size, rng)
        self.token_index = token_index

    def forward(self, seq: TokenSequence) -> AuPrediction:
        if seq.prefix <= self.token_index:
            raise EmptyRegion("sequence carries no AU token")
        return AuPrediction(self.fc(self.norm(seq.tokens[:, self.token_index])), {})
