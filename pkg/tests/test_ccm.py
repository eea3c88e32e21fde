import numpy as np
import pytest

from rgbdglass import tensor as T
from rgbdglass.ccm import (
    CCM,
    PAIRS,
    AdaptiveSelection,
    ContextPyramid,
    ExplicitMining,
    ImplicitMining,
    SingleModalMining,
    rich_pairs,
)
from rgbdglass.errors import DimensionError
from rgbdglass.nn import ConvBR
from rgbdglass.tensor import Tensor


def make_ccm(c_rgb=4, c_depth=3, c_ctx=6, seed=0):
    return CCM(c_rgb, c_depth, c_ctx, rng=np.random.default_rng(seed)).eval()


def identity_bn(module):
    for name, buf in module.named_buffers():
        buf[...] = 0.0 if name.endswith("running_mean") else 1.0


def zero_attention(module):
    for name, p in module.named_parameters():
        if ".psi2." in f".{name}":
            p.data[...] = 0


def test_pair_order():
    assert PAIRS == ((1, 2), (1, 4), (1, 8), (2, 4), (2, 8), (4, 8))


def test_pyramid_rates_and_extent(rng):
    pyr = ContextPyramid(5, 4, rng).eval()
    cs = pyr(Tensor(rng.standard_normal((2, 5, 7, 9))))
    assert sorted(cs) == [1, 2, 4, 8]
    for r, c in cs.items():
        assert c.shape == (2, 4, 7, 9)
        conv = getattr(pyr, f"r{r}").conv
        assert conv.dilation == r and conv.padding == r


def test_rate_one_branch_is_plain_conv_br(rng):
    pyr = ContextPyramid(3, 4, rng).eval()
    plain = ConvBR(4, 4, 3, rng=rng).eval()
    plain.load_state_dict(pyr.r1.state_dict())
    x = Tensor(rng.standard_normal((1, 3, 6, 6)))
    np.testing.assert_array_equal(pyr(x)[1].data, plain(pyr.proj(x)).data)


def test_rich_pairs(rng):
    cs = {r: Tensor(rng.standard_normal((1, 2, 3, 3))) for r in (1, 2, 4, 8)}
    pairs = rich_pairs(cs)
    assert list(pairs) == list(PAIRS)
    np.testing.assert_array_equal(pairs[(1, 2)].data, cs[1].data + cs[2].data)
    same = {r: cs[1] for r in (1, 2, 4, 8)}
    for v in rich_pairs(same).values():
        np.testing.assert_array_equal(v.data, 2 * cs[1].data)
    with pytest.raises(DimensionError):
        rich_pairs({1: cs[1], 2: cs[2]})


def test_single_modal_shapes_and_zero_attention(rng):
    m = SingleModalMining(5, 4, rng).eval()
    x = Tensor(rng.standard_normal((2, 5, 6, 6)))
    arc, _ = m.aggregate(x)
    assert arc.shape[1] == 6 * 4
    y, pairs = m(x)
    assert y.shape == (2, 4, 6, 6) and len(pairs) == 6
    zero_attention(m)
    np.testing.assert_allclose(m(x)[0].data, m.reduce(arc * 0.25).data, rtol=1e-13, atol=1e-15)


def test_implicit_mining(rng):
    m = ImplicitMining(4, 4, 6, rng).eval()
    a = Tensor(rng.standard_normal((1, 4, 5, 5)))
    b = Tensor(rng.standard_normal((1, 4, 5, 5)))
    assert m.fuse.conv.out_channels == 6
    y = m(a, b)
    assert y.shape == (1, 6, 5, 5)
    assert not np.allclose(y.data, m(b, a).data)
    with pytest.raises(DimensionError):
        m(a, Tensor(np.zeros((1, 4, 4, 5))))


def test_explicit_mining(rng):
    m = ExplicitMining(3, rng).eval()
    assert m.branch((2, 8)).conv.dilation == 8
    assert m.branch((1, 2)).conv.dilation == 2
    pr = {p: Tensor(rng.standard_normal((1, 3, 9, 9))) for p in PAIRS}
    zeros = {p: Tensor(np.zeros((1, 3, 9, 9))) for p in PAIRS}
    assert m(pr, zeros).shape == (1, 3, 9, 9)
    # zero depth pairs leave each branch acting on the RGB pair alone
    for p in PAIRS:
        np.testing.assert_array_equal(m.branch(p)(pr[p] + zeros[p]).data, m.branch(p)(pr[p]).data)


def test_adaptive_selection(rng):
    sel = AdaptiveSelection(4, 5, rng)
    assert sel.reduce.in_channels == 20
    ys = [Tensor(rng.standard_normal((2, 5, 3, 3))) for _ in range(4)]
    assert sel(*ys).shape == (2, 5, 3, 3)
    zero = [Tensor(np.zeros((2, 5, 3, 3))) for _ in range(4)]
    np.testing.assert_array_equal(sel(*zero).data, 0)


def test_ccm_output_shapes(rng):
    ccm = make_ccm()
    out = ccm(Tensor(rng.standard_normal((2, 4, 12, 12))), Tensor(rng.standard_normal((2, 3, 12, 12))))
    for t in (out.crc, out.y_rgb, out.y_depth, out.y_imp, out.y_exp):
        assert t.shape == (2, 6, 12, 12)


def test_ccm_gradients_reach_both_inputs(rng):
    ccm = make_ccm()
    xr = Tensor(rng.standard_normal((1, 4, 6, 6)), requires_grad=True)
    xd = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True)
    (ccm(xr, xd).crc * Tensor(rng.standard_normal((1, 6, 6, 6)))).sum().backward()
    assert np.abs(xr.grad).sum() > 0
    assert np.abs(xd.grad).sum() > 0


def test_ccm_homogeneous_with_identity_bn_and_zero_attention(rng):
    ccm = make_ccm()
    identity_bn(ccm)
    zero_attention(ccm)
    xr = rng.standard_normal((1, 4, 6, 6))
    xd = rng.standard_normal((1, 3, 6, 6))
    one = ccm(Tensor(xr), Tensor(xd)).crc.data
    two = ccm(Tensor(2 * xr), Tensor(2 * xd)).crc.data
    np.testing.assert_array_equal(two, 2 * one)


def test_unshared_modal_weights(rng):
    ccm = make_ccm()
    xr = Tensor(rng.standard_normal((1, 4, 6, 6)))
    xd = Tensor(rng.standard_normal((1, 3, 6, 6)))
    before = ccm(xr, xd).y_depth.data.copy()
    for p in ccm.rgb.parameters():
        p.data += 1.0
    after = ccm(xr, xd)
    assert after.y_depth.data.tobytes() == before.tobytes()
    names = [n for n, _ in ccm.named_parameters()]
    assert any(n.startswith("rgb.") for n in names) and any(n.startswith("depth.") for n in names)


def test_rgb_only_ccm(rng):
    ccm = CCM(4, 3, 6, rng=rng, use_depth=False).eval()
    out = ccm(Tensor(rng.standard_normal((1, 4, 5, 5))))
    assert out.crc.shape == (1, 6, 5, 5) and out.y_depth is None
    with pytest.raises(DimensionError):
        make_ccm()(Tensor(np.zeros((1, 4, 5, 5))))
