import math

import numpy as np
import pytest

from auvit.errors import IndexOutOfRange, ShapeMismatch
from auvit.tensor import Tensor
from auvit.tensor.gradcheck import gradcheck, random_projection
from auvit.vitbase import (MHSA, ConvStem, DownsampleStub, FeatureEmbed, PatchEmbed, PatchEmbedConfig,
                           TokenSequence, TransformerBlock, TransformerBlockConfig, run_base, run_blocks)


def zero_params(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


def seq_of(x, grid=None, prefix=0, cls=False):
    return TokenSequence(Tensor(x), grid, cls, prefix)


# -- embedding ---------------------------------------------------------------------

def test_default_patch_grid():
    cfg = PatchEmbedConfig(image_size=112, patch_size=16)
    assert cfg.grid == (7, 7) and cfg.num_patches == 49
    assert PatchEmbedConfig(image_size=32, patch_size=16).num_patches == 4
    with pytest.raises(ShapeMismatch):
        PatchEmbedConfig(image_size=30, patch_size=16)


def test_zero_image_yields_position_embedding():
    cfg = PatchEmbedConfig(image_size=32, patch_size=16, embed_dim=8)
    embed = PatchEmbed(cfg, np.random.default_rng(0))
    embed.proj.weight.data[:] = 0.0
    seq = embed(np.zeros((3, 32, 32)))
    assert seq.tokens.shape == (1, 5, 8)
    expected = embed.pos_embed.data.copy()
    expected[0, 0] += embed.cls_token.data[0, 0]
    np.testing.assert_array_equal(seq.tokens.data, expected)


def test_patch_order_is_row_major():
    cfg = PatchEmbedConfig(image_size=4, patch_size=2, embed_dim=12, use_class_token=False)
    embed = PatchEmbed(cfg, np.random.default_rng(0))
    embed.proj.weight.data = np.eye(12)
    embed.pos_embed.data[:] = 0.0
    img = np.arange(48.0).reshape(3, 4, 4)
    tokens = embed(img).tokens.data[0]
    # token 1 is the patch at row 0, col 1, flattened channel-major
    np.testing.assert_array_equal(tokens[1], img[:, 0:2, 2:4].reshape(-1))
    np.testing.assert_array_equal(tokens[2], img[:, 2:4, 0:2].reshape(-1))


def test_image_shape_checked():
    embed = PatchEmbed(PatchEmbedConfig(image_size=32, patch_size=16, embed_dim=8), np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        embed(np.zeros((3, 16, 16)))


def test_feature_embed_counts_and_identity():
    rng = np.random.default_rng(0)
    assert FeatureEmbed(256, 14, 14, 16, rng)(np.zeros((256, 14, 14))).num_tokens == 196
    assert FeatureEmbed(4, 1, 1, 4, rng)(np.zeros((4, 1, 1))).num_tokens == 1
    embed = FeatureEmbed(6, 2, 3, 6, rng)
    embed.proj.weight.data = np.eye(6)
    embed.pos_embed.data[:] = 0.0
    fmap = rng.standard_normal((6, 2, 3))
    seq = embed(fmap)
    assert seq.grid == (2, 3) and not seq.has_class_token
    np.testing.assert_array_equal(seq.tokens.data[0], fmap.reshape(6, 6).T)


# -- attention ---------------------------------------------------------------------

def test_single_token_attention_is_value_path():
    rng = np.random.default_rng(1)
    attn = MHSA(4, 2, rng)
    for lin in (attn.wq, attn.wk, attn.wv, attn.wo):
        lin.weight.data = rng.standard_normal((4, 4))
        lin.bias.data = rng.standard_normal(4)
    attn.record_attention = True
    x = rng.standard_normal((1, 1, 4))
    out = attn.attend(Tensor(x)).data
    np.testing.assert_array_equal(attn.last_attention, np.ones((1, 2, 1, 1)))
    v = x[0, 0] @ attn.wv.weight.data + attn.wv.bias.data
    np.testing.assert_allclose(out[0, 0], v @ attn.wo.weight.data + attn.wo.bias.data, atol=1e-12)


def test_zero_value_projection_gives_zero_output():
    attn = MHSA(8, 2, np.random.default_rng(0))
    attn.wv.weight.data[:] = 0.0
    attn.wo.bias.data[:] = 0.0
    out = attn.attend(Tensor(np.random.default_rng(1).standard_normal((2, 5, 8))))
    assert not out.data.any()


def brute_force_attention(x, wq, wk, wv, wo):
    n, d = x.shape
    q, k, v = x @ wq, x @ wk, x @ wv
    out = np.zeros_like(x)
    for i in range(n):
        scores = [sum(q[i, c] * k[j, c] for c in range(d)) / math.sqrt(d) for j in range(n)]
        m = max(scores)
        weights = [math.exp(s - m) for s in scores]
        total = sum(weights)
        for j in range(n):
            out[i] += weights[j] / total * v[j]
    return out @ wo


def test_three_token_attention_matches_brute_force():
    rng = np.random.default_rng(2)
    attn = MHSA(3, 1, rng)
    ws = [rng.uniform(-0.5, 0.5, (3, 3)) for _ in range(4)]
    for lin, w in zip((attn.wq, attn.wk, attn.wv, attn.wo), ws):
        lin.weight.data = w
    x = rng.uniform(-1, 1, (3, 3))
    out = attn.attend(Tensor(x[None])).data[0]
    np.testing.assert_allclose(out, brute_force_attention(x, *ws), atol=1e-12)


def test_attention_rows_are_stochastic():
    attn = MHSA(16, 4, np.random.default_rng(3))
    for lin in (attn.wq, attn.wk):
        lin.weight.data *= 50.0
    attn.record_attention = True
    attn.attend(Tensor(np.random.default_rng(4).standard_normal((2, 9, 16))))
    np.testing.assert_allclose(attn.last_attention.sum(axis=-1), 1.0, atol=1e-10)


def test_heads_must_divide_dim():
    with pytest.raises(ShapeMismatch):
        MHSA(10, 3, np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        TransformerBlockConfig(dim=10, heads=4)


# -- blocks --------------------------------------------------------------------------

def test_zero_block_is_identity():
    block = TransformerBlock(8, 2, 4.0, np.random.default_rng(0))
    zero_params(block)
    x = np.random.default_rng(1).standard_normal((1, 4, 8))
    np.testing.assert_array_equal(block(seq_of(x)).tokens.data, x)


def test_block_gradient_check():
    rng = np.random.default_rng(5)
    block = TransformerBlock(8, 2, 2.0, rng)
    for p in block.parameters():
        p.data = p.data + rng.standard_normal(p.shape) * 0.3
    x = Tensor(rng.standard_normal((1, 4, 8)), requires_grad=True)
    w = rng.standard_normal((1, 4, 8))
    # the key bias adds a per-query constant to every score and has zero gradient
    params = [p for name, p in block.named_parameters() if name != "mhsa.wk.bias"]
    err = gradcheck(lambda: random_projection(block(TokenSequence(x, None)).tokens, w), [x] + params)
    assert err < 1e-4


def test_key_bias_gradient_is_zero():
    rng = np.random.default_rng(6)
    block = TransformerBlock(8, 2, 2.0, rng)
    block.mhsa.wk.bias.data = rng.standard_normal(8)
    out = block(seq_of(rng.standard_normal((1, 5, 8))))
    random_projection(out.tokens, rng.standard_normal((1, 5, 8))).backward()
    np.testing.assert_allclose(block.mhsa.wk.bias.grad, 0.0, atol=1e-12)


def test_depth_twelve_shape_law():
    rng = np.random.default_rng(0)
    embed = PatchEmbed(PatchEmbedConfig(image_size=112, patch_size=16, embed_dim=32), rng)
    blocks = [TransformerBlock(32, 4, 4.0, rng) for _ in range(12)]
    seq = run_base(embed(rng.random((3, 112, 112))), blocks, 12)
    assert seq.tokens.shape == (1, 50, 32)


def small_stack(depth=4, dim=8):
    rng = np.random.default_rng(7)
    blocks = [TransformerBlock(dim, 2, 2.0, rng) for _ in range(depth)]
    x = seq_of(rng.standard_normal((2, 5, dim)), (2, 2), prefix=1, cls=True)
    return blocks, x


def test_run_base_composition_is_exact():
    blocks, x = small_stack()
    full = run_base(x, blocks, len(blocks)).tokens.data
    for k in range(1, len(blocks) + 1):
        split = run_blocks(run_base(x, blocks, k), blocks, start=k).tokens.data
        np.testing.assert_array_equal(split, full)


def test_run_base_bounds():
    blocks, x = small_stack()
    for bad in (0, 5):
        with pytest.raises(IndexOutOfRange):
            run_base(x, blocks, bad)


def test_permutation_covariance_without_positions():
    rng = np.random.default_rng(8)
    block = TransformerBlock(8, 2, 2.0, rng)
    x = rng.standard_normal((1, 4, 8))
    perm = np.array([2, 0, 3, 1])
    a = block(seq_of(x)).tokens.data[0]
    b = block(seq_of(x[:, perm])).tokens.data[0]
    np.testing.assert_allclose(b, a[perm], atol=1e-12)


def test_token_sequence_checks_grid():
    with pytest.raises(ShapeMismatch):
        seq_of(np.zeros((1, 5, 4)), (2, 3))


# -- CNN embedding stand-ins -----------------------------------------------------------

def test_conv_stem_geometry():
    stem = ConvStem(3, (8, 16, 32), np.random.default_rng(0))
    assert stem.out_shape(3, 112) == (32, 14, 14)
    assert stem(np.random.default_rng(1).random((3, 112, 112))).shape == (1, 32, 14, 14)


def test_downsample_stub_averages_blocks():
    img = np.random.default_rng(2).random((3, 8, 8))
    out = DownsampleStub(4)(img).data
    assert out.shape == (1, 3, 2, 2)
    assert out[0, 1, 1, 0] == pytest.approx(img[1, 4:8, 0:4].mean(), abs=1e-15)
