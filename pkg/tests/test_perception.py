import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aliasmem import geometry as G
from aliasmem.errors import ConfigError
from aliasmem.numerics import T, Tensor, grad_check
from aliasmem.perception import (CrossViewBlock, FiLM, GeometryEncoder, PatchEncoder, Perception,
                                 PerceptionConfig, logit_bias, patchify)

CFG = PerceptionConfig(image_size=32, patch=8, width=16, code_width=8, geo_hidden=8, heads=2)


def to64(module):
    module.astype(np.float64)
    return module


def test_patch_count():
    enc = PatchEncoder(CFG, np.random.default_rng(0))
    assert enc(np.zeros((32, 32, 3))).shape == (16, 16)


def test_patchify_row_major_matches_loop():
    img = np.arange(16 * 16 * 3, dtype=float).reshape(16, 16, 3)
    got = patchify(img, 4)
    i = 0
    for r in range(4):
        for c in range(4):
            np.testing.assert_array_equal(got[i], img[r * 4:(r + 1) * 4, c * 4:(c + 1) * 4].ravel())
            i += 1


def test_patchify_rejects_indivisible():
    with pytest.raises(ConfigError):
        patchify(np.zeros((30, 30, 3)), 8)
    with pytest.raises(ConfigError):
        PatchEncoder(CFG, np.random.default_rng(0))(np.zeros((16, 16, 3)))


def test_zero_image_gives_positional_embedding():
    enc = PatchEncoder(CFG, np.random.default_rng(0))
    enc.proj.bias.data[:] = 0.0
    np.testing.assert_array_equal(enc(np.zeros((32, 32, 3))).data, enc.pos.data)


def test_swapping_patches_swaps_content():
    enc = to64(PatchEncoder(CFG, np.random.default_rng(0)))
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(32, 32, 3))
    swapped = img.copy()
    swapped[0:8, 0:8], swapped[24:32, 24:32] = img[24:32, 24:32], img[0:8, 0:8]
    a = enc(img).data - enc.pos.data
    b = enc(swapped).data - enc.pos.data
    np.testing.assert_allclose(b[0], a[15], atol=1e-12)
    np.testing.assert_allclose(b[15], a[0], atol=1e-12)
    np.testing.assert_allclose(b[1:15], a[1:15], atol=1e-12)


def test_geometry_codes_identical_descriptors():
    geo = GeometryEncoder(CFG, np.random.default_rng(0))
    desc = np.tile(np.random.default_rng(1).normal(size=7), (4, 1))
    codes, bias = geo(desc)
    assert np.all(codes.data == codes.data[0]) and np.all(bias.data == bias.data[0])


def test_geometry_unary_bias_zero_at_init():
    geo = GeometryEncoder(CFG, np.random.default_rng(0))
    geo.codes.fc2.weight.data[:] = 0.0
    codes, bias = geo(np.random.default_rng(1).normal(size=(5, 7)))
    np.testing.assert_array_equal(bias.data, 0.0)
    np.testing.assert_array_equal(codes.data, np.tile(geo.codes.fc2.bias.data, (5, 1)))


def test_geometry_encoder_gradient(f64):
    rng = np.random.default_rng(2)
    geo = to64(GeometryEncoder(CFG, rng))
    geo.unary.fc2.weight.data = rng.normal(size=geo.unary.fc2.weight.shape)
    desc = rng.normal(size=(5, 7))
    w = rng.normal(size=(5, CFG.code_width))

    def loss():
        codes, bias = geo(desc)
        return T.tsum(codes * w) + T.tsum(bias * bias)

    assert grad_check(loss, geo.parameters()).worst < 1e-4


def _block(seed=0):
    blk = to64(CrossViewBlock(CFG, np.random.default_rng(seed)))
    blk.attn.wo.weight.data = np.random.default_rng(seed + 1).normal(size=blk.attn.wo.weight.shape)
    return blk


def test_unary_bias_dominance():
    blk = _block()
    blk.attn.wq.weight.data[:] = 0.0
    blk.attn.wk.weight.data[:] = 0.0
    rng = np.random.default_rng(3)
    bias = logit_bias(None, Tensor(np.zeros(3)), Tensor(np.array([0.0, -30.0])))
    _, w = blk.enhance(Tensor(rng.normal(size=(3, 16))), Tensor(rng.normal(size=(2, 16))), bias,
                       return_weights=True)
    tail = math.exp(-30.0) / (1.0 + math.exp(-30.0))
    np.testing.assert_allclose(w.data[..., 1], tail, rtol=1e-9)
    assert tail == pytest.approx(9.4e-14, rel=0.01)


def test_single_key_attention_is_value_projection(f64):
    blk = _block()
    rng = np.random.default_rng(4)
    va, vb = rng.normal(size=(3, 16)), rng.normal(size=(1, 16))
    out, w = blk.enhance(Tensor(va), Tensor(vb), return_weights=True)
    np.testing.assert_array_equal(w.data, 1.0)
    want = va + (vb @ blk.attn.wv.weight.data) @ blk.attn.wo.weight.data + blk.attn.wo.bias.data
    np.testing.assert_allclose(out.data, want, atol=1e-12)


def test_logit_shift_leaves_weights_unchanged():
    blk = _block()
    rng = np.random.default_rng(5)
    va, vb = Tensor(rng.normal(size=(3, 16))), Tensor(rng.normal(size=(4, 16)))
    base = rng.normal(size=(3, 4))
    _, w0 = blk.enhance(va, vb, base, return_weights=True)
    _, w1 = blk.enhance(va, vb, base + np.array([[7.0], [-3.0], [100.0]]), return_weights=True)
    np.testing.assert_allclose(w1.data, w0.data, atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_attention_rows_stochastic_both_directions(seed):
    rng = np.random.default_rng(seed)
    blk = _block(seed % 1000)
    vf, vh = Tensor(rng.normal(size=(4, 16))), Tensor(rng.normal(size=(3, 16)))
    bias = rng.normal(scale=5.0, size=(4, 3))
    for w in (blk.enhance(vf, vh, bias, True)[1], blk.enhance(vh, vf, bias.T, True)[1]):
        assert np.all(w.data >= 0)
        np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-9)


def test_residual_identity_at_init():
    blk = CrossViewBlock(CFG, np.random.default_rng(0))
    rng = np.random.default_rng(6)
    vf, vh = rng.normal(size=(4, 16)).astype(np.float32), rng.normal(size=(5, 16)).astype(np.float32)
    a, b = blk(Tensor(vf), Tensor(vh), rng.normal(size=(4, 5)), rng.normal(size=(5, 4)))
    np.testing.assert_array_equal(a.data, vf)
    np.testing.assert_array_equal(b.data, vh)


def test_bidirectional_uses_pre_update_tokens():
    blk = _block()
    rng = np.random.default_rng(7)
    vf, vh = Tensor(rng.normal(size=(4, 16))), Tensor(rng.normal(size=(5, 16)))
    a, b = blk(vf, vh)
    np.testing.assert_allclose(b.data, blk.enhance(vh, vf).data, atol=1e-12)
    np.testing.assert_allclose(a.data, blk.enhance(vf, vh).data, atol=1e-12)


def test_sequential_cross_reads_enhanced_front():
    blk = _block()
    blk.sequential = True
    rng = np.random.default_rng(7)
    vf, vh = Tensor(rng.normal(size=(4, 16))), Tensor(rng.normal(size=(5, 16)))
    a, b = blk(vf, vh)
    np.testing.assert_allclose(b.data, blk.enhance(vh, a).data, atol=1e-12)
    assert not np.allclose(b.data, blk.enhance(vh, vf).data)


def test_epipolar_gating_on_rectified_pair():
    blk = _block()
    blk.attn.wq.weight.data[:] = 0.0
    blk.attn.wk.weight.data[:] = 0.0
    grid = G.PatchGrid.square(4)
    tau = 0.01
    F = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    d = G.epipolar_distance(F, grid.centers, grid.centers, 1e-8)
    B = G.epipolar_bias(F, grid, grid, 1e-8, tau)
    rng = np.random.default_rng(8)
    _, w = blk.enhance(Tensor(rng.normal(size=(16, 16))), Tensor(rng.normal(size=(16, 16))), B, True)
    w = w.data[0]
    for i in range(16):
        on = np.argmin(d[i])
        assert d[i, on] < 1e-12
        ratio = w[i] / w[i, on]
        assert np.all(ratio <= np.exp(-d[i] / tau) * (1 + 1e-9))


def test_film_neutral_and_saturated():
    film = to64(FiLM(8, 16, np.random.default_rng(0)))
    rng = np.random.default_rng(9)
    v, c = Tensor(rng.normal(size=(4, 16))), Tensor(rng.normal(size=(4, 8)))
    np.testing.assert_array_equal(film(v, c).data, v.data)
    film.gamma.bias.data[:] = -1.0
    film.beta.weight.data = rng.normal(size=(8, 16))
    np.testing.assert_allclose(film(v, c).data, c.data @ film.beta.weight.data, atol=1e-12)


def _views(cfg, rng):
    front, hand = rng.uniform(size=(2, cfg.image_size, cfg.image_size, 3))
    n = cfg.tokens_per_view
    return front, hand, rng.normal(size=(n, 7)), rng.normal(size=(n, 7)), rng.normal(size=(n, n)), rng.normal(size=(n, n))


def test_fused_shape_and_order():
    cfg = PerceptionConfig(image_size=32, patch=8, width=64, code_width=8, geo_hidden=8, heads=4)
    model = Perception(cfg, np.random.default_rng(0))
    front, hand, df, dh, efh, ehf = _views(cfg, np.random.default_rng(1))
    x = model(front, hand, df, dh, efh, ehf)
    assert x.shape == (32, 64)
    # zero-initialized attention output and FiLM leave the raw tokens, front first
    np.testing.assert_array_equal(x.data[:16], model.enc_front(front).data)
    np.testing.assert_array_equal(x.data[16:], model.enc_hand(hand).data)


def test_dorsal_ablation_is_plain_cross_attention():
    cfg = PerceptionConfig(image_size=16, patch=8, width=16, code_width=8, geo_hidden=8, heads=2, dorsal=False)
    model = to64(Perception(cfg, np.random.default_rng(0)))
    model.cross.attn.wo.weight.data = np.random.default_rng(1).normal(size=(16, 16))
    assert not hasattr(model, "geo") and not hasattr(model, "film")
    front, hand, *_ = _views(cfg, np.random.default_rng(2))
    vf, vh = model.enc_front(front), model.enc_hand(hand)
    want = np.concatenate([(vf + model.cross.attn(vf, vh)).data, (vh + model.cross.attn(vh, vf)).data])
    np.testing.assert_allclose(model(front, hand).data, want, atol=1e-12)


def test_perception_gradient(f64):
    cfg = PerceptionConfig(image_size=16, patch=8, width=8, code_width=4, geo_hidden=4, heads=2)
    rng = np.random.default_rng(3)
    model = to64(Perception(cfg, rng))
    for p in model.parameters():
        if not np.any(p.data):
            p.data = rng.normal(0.0, 0.3, size=p.shape)
    inputs = _views(cfg, rng)
    w = rng.normal(size=(8, 8))
    rep = grad_check(lambda: T.tsum(model(*inputs) * w), model.parameters(), max_entries=8)
    assert rep.worst < 1e-4, rep.max_rel_error


def test_non_finite_logits_raise():
    blk = _block()
    with pytest.raises(FloatingPointError):
        blk.enhance(Tensor(np.ones((2, 16))), Tensor(np.ones((2, 16))), np.full((2, 2), np.nan))
