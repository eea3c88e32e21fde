import numpy as np
import pytest

from rgbdglass import tensor as T
from rgbdglass.errors import ConfigurationError, DimensionError
from rgbdglass.nn import (
    AttentionHead,
    ContextAttention,
    ConvBR,
    Parameter,
    channel_attention,
    context_attention,
    he_uniform,
)
from rgbdglass.tensor import Tensor


def zero_psi2(head):
    head.psi2.weight.data[...] = 0
    head.psi2.bias.data[...] = 0


def test_conv_br_constant_input_train_mode_gives_zero():
    block = ConvBR(2, 3, 1, rng=np.random.default_rng(0))
    out = block(Tensor(np.ones((2, 2, 6, 6))))
    # batch mean equals every value, so normalization yields 0 before ReLU
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_conv_br_beta_shifts_constant_output():
    block = ConvBR(1, 2, 1, rng=np.random.default_rng(0))
    block.bn_beta.data[...] = 5.0
    out = block(Tensor(np.full((2, 1, 4, 4), 0.7)))
    np.testing.assert_allclose(out.data, 5.0, atol=1e-5)


def test_conv_br_preserves_extent():
    block = ConvBR(3, 4, 3, stride=1, padding=1, rng=np.random.default_rng(0))
    assert block(Tensor(np.zeros((1, 3, 24, 24)))).shape == (1, 4, 24, 24)


def test_conv_br_running_stats_update_only_in_train(rng):
    block = ConvBR(2, 3, 3, rng=rng)
    x = Tensor(rng.standard_normal((4, 2, 5, 5)) + 2)
    block.eval()
    block(x)
    np.testing.assert_array_equal(block.running_mean, 0)
    np.testing.assert_array_equal(block.running_var, 1)
    block.train()
    block(x)
    assert not np.allclose(block.running_mean, 0)
    assert (block.running_var >= 0).all()


def test_conv_br_eval_is_pure(rng):
    block = ConvBR(2, 3, 3, rng=rng).eval()
    x = Tensor(rng.standard_normal((2, 2, 5, 5)))
    assert block(x).data.tobytes() == block(x).data.tobytes()


def test_conv_br_eval_uses_running_stats(rng):
    block = ConvBR(2, 3, 1, rng=rng).eval()
    block.running_mean[...] = [0.1, -0.2, 0.3]
    block.running_var[...] = [2.0, 0.5, 1.0]
    x = rng.standard_normal((1, 2, 3, 3))
    z = T.conv2d(Tensor(x), block.conv.weight, block.conv.bias).data
    ref = np.maximum((z - block.running_mean[:, None, None]) / np.sqrt(block.running_var[:, None, None] + 1e-5), 0)
    np.testing.assert_allclose(block(Tensor(x)).data, ref, rtol=1e-12)


def test_channel_attention_zero_head_halves(rng):
    head = AttentionHead(6, 6, rng=rng)
    zero_psi2(head)
    x = rng.standard_normal((2, 6, 4, 4))
    out = channel_attention(Tensor(x), head)
    np.testing.assert_allclose(out.data, 0.5 * x, rtol=0, atol=0)


def test_channel_attention_shape_and_weight_range(rng):
    head = AttentionHead(8, 8, rng=rng)
    x = Tensor(rng.standard_normal((2, 8, 5, 3)) * 50)
    assert channel_attention(x, head).shape == x.shape
    w = head(x).data
    assert w.shape == (2, 8, 1, 1)
    assert ((w > 0) & (w < 1)).all()


def test_channel_attention_rejects_mismatch(rng):
    with pytest.raises(DimensionError):
        channel_attention(Tensor(np.zeros((1, 4, 2, 2))), AttentionHead(4, 3, rng=rng))


def test_hidden_width_reduction():
    assert AttentionHead(48, 48).psi1.out_channels == 12
    assert AttentionHead(3, 3).psi1.out_channels == 1


def test_context_attention_group_scaling(rng):
    head = AttentionHead(12, 6, rng=rng)
    x = rng.uniform(0.5, 2.0, (2, 12, 4, 4))
    ratio = context_attention(Tensor(x), head, 6).data / x
    groups = ratio.reshape(2, 6, 2, 4, 4)
    # one factor per (sample, context): constant over channels in the group and over space
    spread = groups.max(axis=(2, 3, 4)) - groups.min(axis=(2, 3, 4))
    np.testing.assert_allclose(spread, 0, atol=1e-15)


def test_context_attention_zero_head_halves(rng):
    head = AttentionHead(12, 6, rng=rng)
    zero_psi2(head)
    x = rng.standard_normal((1, 12, 3, 3))
    np.testing.assert_array_equal(context_attention(Tensor(x), head, 6).data, 0.5 * x)


def test_context_attention_indivisible_channels(rng):
    with pytest.raises(ConfigurationError):
        context_attention(Tensor(np.zeros((1, 10, 2, 2))), AttentionHead(10, 6, rng=rng), 6)
    with pytest.raises(ConfigurationError):
        ContextAttention(10, 6)


def test_joint_attention_is_spatially_constant(rng):
    att = ContextAttention(12, 6, rng=rng)
    x = rng.uniform(0.5, 2.0, (2, 12, 5, 4))
    out = att(Tensor(x)).data
    assert out.shape == x.shape
    ratio = out / x
    np.testing.assert_allclose(ratio - ratio[:, :, :1, :1], 0, atol=1e-15)


def test_joint_attention_zero_heads_quarter(rng):
    att = ContextAttention(12, 6, rng=rng)
    zero_psi2(att.cna)
    zero_psi2(att.cxa)
    x = rng.standard_normal((1, 12, 3, 3))
    np.testing.assert_array_equal(att(Tensor(x)).data, 0.25 * x)


def test_init_conventions(rng):
    block = ConvBR(4, 6, 3, rng=rng)
    np.testing.assert_array_equal(block.bn_gamma.data, 1)
    np.testing.assert_array_equal(block.bn_beta.data, 0)
    w = he_uniform(np.random.default_rng(0), (64, 32, 3, 3))
    bound = np.sqrt(6 / (32 * 9))
    assert np.abs(w).max() <= bound
    assert w.std() == pytest.approx(bound / np.sqrt(3), rel=0.02)


def test_module_names_and_state_round_trip(rng):
    block = ConvBR(2, 3, 3, rng=rng)
    names = [n for n, _ in block.named_parameters()]
    assert names == ["bn_gamma", "bn_beta", "conv.weight", "conv.bias"]
    state = block.state_dict()
    assert set(state) == set(names) | {"running_mean", "running_var"}
    other = ConvBR(2, 3, 3, rng=np.random.default_rng(99))
    other.load_state_dict(state)
    for k, v in other.state_dict().items():
        np.testing.assert_array_equal(v, state[k])
    with pytest.raises(KeyError):
        other.load_state_dict({"bogus": np.zeros(1)})


def test_frozen_parameter_is_not_trainable():
    p = Parameter(np.zeros(1), requires_grad=False)
    assert not p.requires_grad
