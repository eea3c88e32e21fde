import math

import numpy as np
import pytest

from rgbdglass import tensor as T
from rgbdglass.errors import ConfigurationError, DataError, DimensionError
from rgbdglass.glassnet import GlassNet, NetworkConfig, StagePrediction, hybrid_loss, soft_iou_loss
from rgbdglass.tensor import Tensor


def inputs(rng, b=1, size=96, p_missing=0.2):
    rgb = rng.random((b, 3, size, size))
    dm = (rng.random((b, 1, size, size)) < p_missing).astype(float)
    depth = rng.random((b, 1, size, size)) * (1 - dm)
    return rgb, depth, dm


def fake_preds(logits):
    return [StagePrediction(s, Tensor(l), None) for s, l in zip((4, 3, 2, 1), logits)]


def test_default_network_shapes(rng):
    net = GlassNet(seed=0).eval()
    preds = net(*inputs(rng, size=384, p_missing=0.1))
    assert [p.stage for p in preds] == [4, 3, 2, 1]
    assert [p.logits_native.shape[2] for p in preds] == [12, 24, 48, 96]
    for p in preds:
        assert p.logits_full.shape == (1, 1, 384, 384)
    assert net.ccm4.select.reduce.in_channels == 4 * net.cfg.c_ctx[3]


def test_daa_only_on_coarse_stages(toy_cfg):
    net = GlassNet(toy_cfg)
    names = {n.split(".")[0] for n, _ in net.named_parameters()}
    assert {"daa4", "daa3"} <= names
    assert "daa2" not in names and "daa1" not in names
    assert len(net.daa_modules()) == 2


def test_toy_forward_and_predict(rng, toy_cfg):
    net = GlassNet(toy_cfg, seed=1).eval()
    x = inputs(rng, b=2)
    preds = net(*x)
    assert [p.logits_native.shape[2] for p in preds] == [3, 6, 12, 24]
    prob = net.predict_proba(*x)
    assert prob.shape == (2, 96, 96)
    assert ((prob >= 0) & (prob <= 1)).all()
    assert prob.tobytes() == net.predict_proba(*x).tobytes()


def test_missing_map_irrelevant_when_gains_zero(rng, toy_cfg):
    net = GlassNet(toy_cfg, seed=2).eval()
    rgb, depth, dm = inputs(rng)
    base = [p.logits_full.data for p in net(rgb, depth, dm)]
    other = (rng.random(dm.shape) < 0.7).astype(float)
    for a, p in zip(base, net(rgb, depth, other)):
        assert a.tobytes() == p.logits_full.data.tobytes()


def test_missing_map_matters_when_gains_nonzero(rng, toy_cfg):
    net = GlassNet(toy_cfg, seed=2).eval()
    for m in net.daa_modules():
        for s in m.streams():
            s.gamma.data[...] = 0.5
    rgb, depth, dm = inputs(rng)
    a = net(rgb, depth, dm)
    b = net(rgb, depth, 1 - dm)
    assert not np.allclose(a[0].logits_full.data, b[0].logits_full.data)
    assert not np.allclose(a[1].logits_full.data, b[1].logits_full.data)


def test_forward_validation(rng, toy_cfg):
    net = GlassNet(toy_cfg).eval()
    rgb, depth, dm = inputs(rng)
    with pytest.raises(DataError):
        net(rgb, depth, dm * 0.5)
    with pytest.raises(DimensionError):
        net(rgb, depth, None)
    with pytest.raises(DimensionError):
        net(rgb, depth[:, :, :48], dm)
    with pytest.raises(DimensionError):
        net(rgb[:, :2], depth, dm)


def test_config_validation_and_round_trip(toy_cfg):
    with pytest.raises(ConfigurationError):
        NetworkConfig(daa_stages=(5,))
    with pytest.raises(ConfigurationError):
        NetworkConfig(n_stages=3)
    with pytest.raises(ConfigurationError):
        NetworkConfig(use_depth=False)
    assert NetworkConfig().c_ctx == (16, 32, 64, 128)
    assert NetworkConfig().daa_stages == (4, 3)
    assert NetworkConfig.from_dict(toy_cfg.to_dict()) == toy_cfg


def test_rgb_only_network(rng, toy_cfg):
    d = toy_cfg.to_dict()
    d.update(use_depth=False, daa_stages=[])
    net = GlassNet(NetworkConfig.from_dict(d)).eval()
    assert len(net(inputs(rng)[0])) == 4
    assert not any(n.startswith("depth_backbone") for n, _ in net.named_parameters())


# ---------------------------------------------------------------- loss


def test_saturated_correct_logits_give_tiny_loss(rng):
    gt = (rng.random((2, 1, 8, 8)) < 0.5).astype(float)
    gt[:, :, 0, 0] = 1
    logits = np.where(gt == 1, 40.0, -40.0)
    _, per = hybrid_loss(fake_preds([logits] * 4), gt)
    for loss in per:
        # the IoU term keeps a smoothing residual of order e^-40 / |gt|, far below 1e-6
        assert loss.item() < 1e-6


def test_zero_logits_bce_is_ln2(rng):
    gt = (rng.random((2, 1, 8, 8)) < 0.3).astype(float)
    z = Tensor(np.zeros((2, 1, 8, 8)))
    assert T.bce_with_logits(z, gt).item() == pytest.approx(math.log(2), abs=1e-15)


def test_soft_iou_perfect_ones():
    logits = Tensor(np.full((1, 1, 4, 4), 800.0))
    assert soft_iou_loss(logits, np.ones((1, 1, 4, 4))).item() == 0.0


def test_soft_iou_hand_value():
    # p = 0.5 everywhere over 4 pixels, gt has 2 ones: inter 1, union 2 + 2 - 1 = 3 -> 1 - 2/4
    gt = np.array([1.0, 1.0, 0.0, 0.0]).reshape(1, 1, 2, 2)
    assert soft_iou_loss(Tensor(np.zeros((1, 1, 2, 2))), gt).item() == pytest.approx(0.5, abs=1e-15)


def test_total_is_sum_of_stages_and_weights_drop_exactly(rng):
    gt = (rng.random((1, 1, 8, 8)) < 0.4).astype(float)
    preds = fake_preds([rng.standard_normal((1, 1, 8, 8)) for _ in range(4)])
    total, per = hybrid_loss(preds, gt)
    assert total.item() == pytest.approx(sum(p.item() for p in per), abs=1e-14)
    for i in range(4):
        w = [1.0] * 4
        w[i] = 0.0
        dropped, _ = hybrid_loss(preds, gt, w)
        assert total.item() - dropped.item() == pytest.approx(per[i].item(), abs=1e-12)


def test_loss_rejects_non_binary_gt(rng):
    preds = fake_preds([np.zeros((1, 1, 4, 4))] * 4)
    with pytest.raises(DataError):
        hybrid_loss(preds, np.full((1, 1, 4, 4), 0.5))
    with pytest.raises(ConfigurationError):
        hybrid_loss(preds, np.zeros((1, 1, 4, 4)), (1.0, 1.0))
