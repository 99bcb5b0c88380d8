import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auvit.errors import LabelOutOfRange, MissingClassToken, MissingGrid
from auvit.expbranch import ExpHead, ExpHeadConfig, ce_loss, exp_head_param_count
from auvit.tensor import Tensor
from auvit.vitbase import TokenSequence


def cls_seq(rng, n=4, d=8, batch=2):
    return TokenSequence(Tensor(rng.standard_normal((batch, n + 1, d))), (2, n // 2), True, 1)


def test_cls_head_emits_k_logits():
    rng = np.random.default_rng(0)
    head = ExpHead(ExpHeadConfig(num_classes=7, dim=8), rng)
    assert head(cls_seq(rng)).shape == (2, 7)


def test_zero_weights_give_bias():
    rng = np.random.default_rng(1)
    head = ExpHead(ExpHeadConfig(num_classes=3, dim=8), rng)
    head.fc.weight.data[:] = 0.0
    head.fc.bias.data = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(head(cls_seq(rng)).data, [[0.5, -1.0, 2.0]] * 2)


def test_flatten_width():
    cfg = ExpHeadConfig(variant="patch_flatten", num_classes=7, dim=512, num_patches=49)
    assert cfg.input_width == 25088


def test_variant_preconditions():
    rng = np.random.default_rng(2)
    head = ExpHead(ExpHeadConfig(dim=8), rng)
    with pytest.raises(MissingClassToken):
        head(TokenSequence(Tensor(np.zeros((1, 4, 8))), (2, 2)))
    with pytest.raises(MissingGrid):
        ExpHeadConfig(variant="patch_flatten")
    flat = ExpHead(ExpHeadConfig(variant="patch_flatten", dim=8, num_patches=4, hidden=6), rng)
    with pytest.raises(MissingGrid):
        flat(TokenSequence(Tensor(np.zeros((1, 4, 8))), None))


def test_flatten_head_sees_every_patch():
    rng = np.random.default_rng(3)
    head = ExpHead(ExpHeadConfig(variant="patch_flatten", num_classes=3, dim=4, num_patches=6, hidden=5), rng)
    x = rng.standard_normal((1, 6, 4))
    ref = head(TokenSequence(Tensor(x), (2, 3))).data
    for i in range(6):
        bumped = x.copy()
        bumped[0, i] *= -1.5
        assert np.abs(head(TokenSequence(Tensor(bumped), (2, 3))).data - ref).max() > 1e-9


@pytest.mark.parametrize("cfg", [ExpHeadConfig(num_classes=5, dim=8),
                                 ExpHeadConfig(variant="patch_flatten", num_classes=5, dim=8, num_patches=6,
                                               hidden=7)])
def test_param_count_formula(cfg):
    assert ExpHead(cfg, np.random.default_rng(0)).num_parameters() == exp_head_param_count(cfg)


def test_uniform_logits_give_log_k():
    assert ce_loss(Tensor(np.zeros((3, 7))), [0, 3, 6]).item() == pytest.approx(math.log(7), abs=1e-15)
    assert math.log(7) == pytest.approx(1.945910, abs=1e-6)


def test_confident_true_class_drives_loss_to_zero():
    values = [ce_loss(Tensor(np.array([[m, 0.0, 0.0]])), [0]).item() for m in (0.0, 2.0, 5.0, 10.0, 40.0)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-16


def test_ce_matches_scalar_loop_and_gradient():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((6, 5)) * 2
    y = rng.integers(0, 5, 6)
    total = 0.0
    for row, lab in zip(z, y):
        m = max(row)
        total += -(row[lab] - m - math.log(sum(math.exp(v - m) for v in row)))
    logits = Tensor(z, requires_grad=True)
    loss = ce_loss(logits, y)
    assert loss.item() == pytest.approx(total / 6, abs=1e-12)
    loss.backward()
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(logits.grad, (p - np.eye(5)[y]) / 6, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_ce_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    z, y = rng.standard_normal((4, 7)), rng.integers(0, 7, 4)
    assert ce_loss(Tensor(z + shift), y).item() == pytest.approx(ce_loss(Tensor(z), y).item(), abs=1e-10)


def test_labels_out_of_range():
    with pytest.raises(LabelOutOfRange):
        ce_loss(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(LabelOutOfRange):
        ce_loss(Tensor(np.zeros((2, 3))), [-1, 0])
