"""AU-ViT assembly: base branch, ViT-Exp head and AU branch over a shared tap point.

Vanilla: patch embedding with a class token, ``depth`` standard blocks. The AU
branch reads the sequence after block ``au_tap_block``; the remaining blocks
feed the class-token head.

CNN-ViT: a CNN embedding (conv stem, downsample stub, or precomputed feature
maps) turned into 1x1 patch tokens, then multi-stage transformer stages. The
AU branch reads the output of stage ``au_tap_stage``; the remaining stages
feed the patch-flatten head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .aubranch import AUBranch, AUTokenHead, AuPrediction, au_branch_param_count, build_scheme, seq2img
from .aubranch.schemes import RegionScheme
from .dataio.vocab import DEFAULT_AUS, AuVocabulary
from .errors import ConfigError
from .expbranch import ExpHead, ExpHeadConfig, exp_head_param_count
from .multistage import StageConfig, build_stages, multistage_param_count
from .tensor import Module, Tensor
from .vitbase import (ConvStem, DownsampleStub, FeatureEmbed, PatchEmbed, PatchEmbedConfig,
                      TokenSequence, TransformerBlock, run_base, run_blocks)

VARIANTS = ("vanilla", "cnn_vit")
CNN_EMBEDDINGS = ("conv", "stub", "features")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "vanilla"
    image_size: int = 112
    patch_size: int = 16
    in_channels: int = 3
    dim: int = 256
    depth: int = 12
    heads: int = 8
    mlp_ratio: float = 4.0
    au_tap_block: int = 10
    scheme: int = 7
    au_token_baseline: bool = False
    num_classes: int = 7
    aus: tuple = DEFAULT_AUS
    exp_hidden: int = 512
    # pixels are standardised as (x - mean) / std before embedding
    input_mean: float = 0.5
    input_std: float = 0.5
    # cnn_vit only
    stage_depths: tuple = (2, 2)
    au_tap_stage: int = 1
    conv_ratio: int = 4
    cnn_embedding: str = "conv"
    cnn_channels: tuple = (64, 128, 256)
    stub_factor: int = 8
    feature_shape: Optional[tuple] = None  # (C, H, W) of precomputed maps

    def __post_init__(self):
        for name in ("aus", "stage_depths", "cnn_channels", "feature_shape"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}", "variant")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by {self.heads} heads", "heads")
        if self.input_std <= 0:
            raise ConfigError("input_std must be positive", "input_std")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive", "num_classes")
        if self.variant == "vanilla":
            if not 1 <= self.au_tap_block <= self.depth:
                raise ConfigError(f"au_tap_block {self.au_tap_block} outside 1..{self.depth}", "au_tap_block")
            if self.image_size % self.patch_size:
                raise ConfigError(f"image_size {self.image_size} not divisible by patch_size "
                                  f"{self.patch_size}", "patch_size")
        else:
            if self.au_token_baseline:
                raise ConfigError("the AU-token baseline needs the vanilla variant", "au_token_baseline")
            if not 1 <= self.au_tap_stage <= len(self.stage_depths):
                raise ConfigError(f"au_tap_stage {self.au_tap_stage} outside 1..{len(self.stage_depths)}",
                                  "au_tap_stage")
            if self.cnn_embedding not in CNN_EMBEDDINGS:
                raise ConfigError(f"unknown cnn_embedding {self.cnn_embedding!r}", "cnn_embedding")
            if self.cnn_embedding == "features" and self.feature_shape is None:
                raise ConfigError("feature embedding needs feature_shape (C, H, W)", "feature_shape")

    @property
    def vocab(self) -> AuVocabulary:
        return AuVocabulary(self.aus)

    def region_scheme(self) -> RegionScheme:
        return build_scheme(self.scheme)

    def embedding_shape(self) -> tuple:
        """(C, H, W) of the map fed to the 1x1 feature embedding (cnn_vit)."""
        if self.cnn_embedding == "features":
            return self.feature_shape
        if self.cnn_embedding == "stub":
            return DownsampleStub(self.stub_factor).out_shape(self.in_channels, self.image_size)
        n = len(self.cnn_channels)
        return self.cnn_channels[-1], self.image_size >> n, self.image_size >> n

    def stage_config(self) -> StageConfig:
        _, h, w = self.embedding_shape()
        return StageConfig(self.stage_depths, (h, w, self.dim))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model keys {unknown}", f"model.{unknown[0]}")
        return cls(**d)


class AUViT(Module):
    def __init__(self, cfg: ModelConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.vocab = cfg.vocab
        self.scheme = cfg.region_scheme()
        if cfg.variant == "vanilla":
            extra = 1 if cfg.au_token_baseline else 0
            self.patch_embed = PatchEmbed(PatchEmbedConfig(cfg.image_size, cfg.patch_size, cfg.dim, True,
                                                           cfg.in_channels, extra), rng)
            self.blocks = [TransformerBlock(cfg.dim, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]
            exp_cfg = ExpHeadConfig("cls_token", cfg.num_classes, cfg.dim)
        else:
            c, h, w = cfg.embedding_shape()
            if cfg.cnn_embedding == "conv":
                self.cnn = ConvStem(cfg.in_channels, cfg.cnn_channels, rng)
            elif cfg.cnn_embedding == "stub":
                self.cnn = DownsampleStub(cfg.stub_factor)
            else:
                self.cnn = None
            self.feature_embed = FeatureEmbed(c, h, w, cfg.dim, rng)
            stage_cfg = cfg.stage_config()
            self.stages = build_stages(stage_cfg, cfg.heads, cfg.conv_ratio, rng)
            fh, fw, fd = stage_cfg.dims_after(len(cfg.stage_depths) - 1)
            exp_cfg = ExpHeadConfig("patch_flatten", cfg.num_classes, fd, fh * fw, cfg.exp_hidden)
        self.exp_head = ExpHead(exp_cfg, rng)
        if cfg.au_token_baseline:
            self.au_head = AUTokenHead(cfg.dim, len(self.vocab), rng)
        else:
            self.au_head = AUBranch(self.scheme, self.vocab, self._tap_dim(), rng)

    def _tap_dim(self) -> int:
        if self.cfg.variant == "vanilla":
            return self.cfg.dim
        return self.cfg.stage_config().dims_after(self.cfg.au_tap_stage - 1)[2]

    # -- parameter groups ---------------------------------------------------
    def param_groups(self) -> dict:
        """Parameter names split into ``exp_head``, ``au_head`` and ``base``."""
        groups = {"base": [], "exp_head": [], "au_head": []}
        for name, _ in self.named_parameters():
            head = name.split(".", 1)[0]
            groups[head if head in ("exp_head", "au_head") else "base"].append(name)
        return groups

    def attention_modules(self) -> list:
        if self.cfg.variant == "vanilla":
            return [b.mhsa for b in self.blocks]
        return [b.mhsa for s in self.stages for b in s.blocks]

    # -- forward pieces -------------------------------------------------------
    def normalize(self, x):
        if self.cfg.variant == "cnn_vit" and self.cfg.cnn_embedding == "features":
            return x
        mean, std = self.cfg.input_mean, self.cfg.input_std
        if isinstance(x, Tensor):
            return (x - mean) * (1.0 / std)
        return (np.asarray(x, dtype=np.float64) - mean) / std

    def embed(self, x) -> TokenSequence:
        x = self.normalize(x)
        if self.cfg.variant == "vanilla":
            return self.patch_embed(x)
        if self.cnn is not None:
            x = self.cnn(x)
        return self.feature_embed(x)

    def tap(self, x) -> TokenSequence:
        """Embedding followed by the base branch up to the AU tap point."""
        seq = self.embed(x)
        if self.cfg.variant == "vanilla":
            return run_base(seq, self.blocks, self.cfg.au_tap_block)
        for stage in self.stages[:self.cfg.au_tap_stage]:
            seq = stage(seq)
        return seq

    def exp_from_tap(self, seq: TokenSequence) -> Tensor:
        if self.cfg.variant == "vanilla":
            seq = run_blocks(seq, self.blocks, self.cfg.au_tap_block)
        else:
            for stage in self.stages[self.cfg.au_tap_stage:]:
                seq = stage(seq)
        return self.exp_head(seq)

    def au_from_tap(self, seq: TokenSequence) -> AuPrediction:
        if self.cfg.au_token_baseline:
            return self.au_head(seq)
        return self.au_head(seq2img(seq))

    def forward(self, x) -> tuple:
        """``(expression logits [B,K], AuPrediction)`` for a batch."""
        seq = self.tap(x)
        return self.exp_from_tap(seq), self.au_from_tap(seq)

    def exp_logits(self, x) -> Tensor:
        return self.exp_from_tap(self.tap(x))

    def au_logits(self, x) -> AuPrediction:
        return self.au_from_tap(self.tap(x))


def analytic_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count, used to cross-check a built model."""
    d = cfg.dim
    vocab = cfg.vocab
    if cfg.variant == "vanilla":
        grid = cfg.image_size // cfg.patch_size
        n = grid * grid
        prefix = 1 + int(cfg.au_token_baseline)
        embed = (cfg.in_channels * cfg.patch_size ** 2) * d + d + prefix * d + (prefix + n) * d
        hidden = int(d * cfg.mlp_ratio)
        block = 4 * d + 4 * (d * d + d) + (d * hidden + hidden) + (hidden * d + d)
        exp = exp_head_param_count(ExpHeadConfig("cls_token", cfg.num_classes, d))
        tap_dim = d
        base = embed + cfg.depth * block
    else:
        c, h, w = cfg.embedding_shape()
        stem = 0
        if cfg.cnn_embedding == "conv":
            dims = (cfg.in_channels,) + cfg.cnn_channels
            stem = sum(4 * dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(cfg.cnn_channels)))
        stage_cfg = cfg.stage_config()
        base = stem + c * d + d + h * w * d + multistage_param_count(stage_cfg, cfg.conv_ratio)
        fh, fw, fd = stage_cfg.dims_after(len(cfg.stage_depths) - 1)
        exp = exp_head_param_count(ExpHeadConfig("patch_flatten", cfg.num_classes, fd, fh * fw, cfg.exp_hidden))
        tap_dim = stage_cfg.dims_after(cfg.au_tap_stage - 1)[2]
    if cfg.au_token_baseline:
        au = 2 * d + d * len(vocab) + len(vocab)
    else:
        au = au_branch_param_count(cfg.region_scheme(), vocab, tap_dim)
    return base + exp + au
