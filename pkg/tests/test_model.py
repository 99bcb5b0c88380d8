import numpy as np
import pytest

from auvit.aubranch import seq2img
from auvit.errors import ConfigError
from auvit.model import AUViT, ModelConfig, analytic_param_count

SMALL = dict(image_size=32, patch_size=8, dim=16, depth=3, heads=2, au_tap_block=2, num_classes=4)
CNN_SMALL = dict(variant="cnn_vit", image_size=32, dim=8, heads=2, stage_depths=(1, 1), cnn_channels=(4, 8),
                 num_classes=3, exp_hidden=16)


@pytest.mark.parametrize("cfg", [
    ModelConfig(),
    ModelConfig(au_token_baseline=True),
    ModelConfig(**SMALL),
    ModelConfig(**SMALL, scheme=9),
    ModelConfig(**CNN_SMALL),
    ModelConfig(**{**CNN_SMALL, "cnn_embedding": "stub", "stub_factor": 4}),
    ModelConfig(**{**CNN_SMALL, "cnn_embedding": "features", "feature_shape": (6, 8, 8)}),
], ids=["default", "au_token", "small", "small9", "cnn_conv", "cnn_stub", "cnn_features"])
def test_analytic_param_count(cfg):
    assert AUViT(cfg, np.random.default_rng(0)).num_parameters() == analytic_param_count(cfg)


def test_default_counts_are_frozen():
    # frozen from the closed-form count; guards against silent architecture drift
    assert analytic_param_count(ModelConfig()) == 9694748
    assert analytic_param_count(ModelConfig(variant="cnn_vit")) == 21606620


def test_vanilla_forward_shapes():
    model = AUViT(ModelConfig(**SMALL), np.random.default_rng(0))
    z_fer, au = model(np.random.default_rng(1).random((2, 3, 32, 32)))
    assert z_fer.shape == (2, 4) and au.logits.shape == (2, 21)
    assert model.tap(np.zeros((1, 3, 32, 32))).num_tokens == 17


def test_cnn_forward_shapes():
    model = AUViT(ModelConfig(**CNN_SMALL), np.random.default_rng(0))
    z_fer, au = model(np.random.default_rng(1).random((2, 3, 32, 32)))
    assert z_fer.shape == (2, 3) and au.logits.shape == (2, 21)
    seq = model.tap(np.zeros((1, 3, 32, 32)))
    assert seq.grid == (8, 8) and seq.dim == 8


def test_feature_input_skips_normalisation():
    cfg = ModelConfig(**{**CNN_SMALL, "cnn_embedding": "features", "feature_shape": (6, 8, 8)})
    model = AUViT(cfg)
    x = np.random.default_rng(2).standard_normal((1, 6, 8, 8))
    np.testing.assert_array_equal(model.normalize(x), x)


def test_au_token_baseline_reads_second_token():
    model = AUViT(ModelConfig(**SMALL, au_token_baseline=True))
    assert model.tap(np.zeros((1, 3, 32, 32))).prefix == 2
    assert model.au_logits(np.zeros((1, 3, 32, 32))).logits.shape == (1, 21)


def test_param_groups_partition():
    model = AUViT(ModelConfig(**SMALL))
    groups = model.param_groups()
    names = [n for n, _ in model.named_parameters()]
    assert sorted(sum(groups.values(), [])) == sorted(names)
    assert all(n.startswith("exp_head.") for n in groups["exp_head"])
    assert all(n.startswith("au_head.") for n in groups["au_head"])


def test_heads_see_disjoint_gradients():
    model = AUViT(ModelConfig(**SMALL), np.random.default_rng(0))
    x = np.random.default_rng(1).random((2, 3, 32, 32))
    groups = model.param_groups()
    params = dict(model.named_parameters())
    model.exp_logits(x).sum().backward()
    assert all(params[n].grad is None for n in groups["au_head"])
    model.zero_grad()
    model.au_logits(x).logits.sum().backward()
    assert all(params[n].grad is None for n in groups["exp_head"])


def test_full_model_mirror_invariance_at_the_tap():
    model = AUViT(ModelConfig(**SMALL), np.random.default_rng(3))
    for p in model.au_head.parameters():
        p.data = np.random.default_rng(4).standard_normal(p.shape)

    fmap = seq2img(model.tap(np.random.default_rng(5).random((2, 3, 32, 32)))).data
    a = model.au_head(fmap).logits.data
    b = model.au_head(np.ascontiguousarray(fmap[..., ::-1])).logits.data
    assert np.max(np.abs(a - b)) <= 1e-12


@pytest.mark.parametrize("kw, field", [({"au_tap_block": 13}, "au_tap_block"), ({"heads": 7}, "heads"),
                                       ({"variant": "swin"}, "variant"), ({"patch_size": 15}, "patch_size")])
def test_config_validation(kw, field):
    with pytest.raises(ConfigError) as info:
        ModelConfig(**kw)
    assert info.value.field == field


def test_config_round_trip():
    cfg = ModelConfig(**CNN_SMALL)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError) as info:
        ModelConfig.from_dict({"depht": 3})
    assert info.value.field == "model.depht"
