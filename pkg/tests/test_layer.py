import numpy as np
import pytest

from hiflow.attention import WindowGeom, tifm_att
from hiflow.errors import ConfigurationError
from hiflow.layer import (FFNParams, TIFMLayer, build_variant, conv_ffn, hiir_layer,
                          zero_branches)
from hiflow.tensor import Tensor, conv2d, gelu, grad_check, layer_norm


def rng(seed=0):
    return np.random.default_rng(seed)


def test_conv_ffn_zero_weights_zero_output():
    ffn = FFNParams(rng(0), 4, 2, dtype="f64")
    for _, p in ffn.named_params():
        p.data[...] = 0.0
    x = Tensor(rng(1).standard_normal((1, 4, 4, 4)), dtype="f64")
    assert np.all(conv_ffn(x, ffn).data == 0.0)


def test_conv_ffn_identity_construction():
    # ratio 1, identity 1x1s, center-only depthwise, GELUs off
    c = 3
    ffn = FFNParams(rng(2), c, 1, dtype="f64", linear=True)
    eye = np.eye(c)[None, None]
    ffn.expand.w.data = eye.copy()
    ffn.project.w.data = eye.copy()
    ffn.expand.b.data[...] = 0.0
    ffn.project.b.data[...] = 0.0
    dw = np.zeros((3, 3, 1, c))
    dw[1, 1, 0, :] = 1.0
    ffn.dw.w.data = dw
    ffn.dw.b.data[...] = 0.0
    x = Tensor(rng(3).standard_normal((2, 4, 5, c)), dtype="f64")
    assert np.allclose(conv_ffn(x, ffn).data, x.data, atol=1e-12)


def test_conv_ffn_matches_manual_composition():
    ffn = FFNParams(rng(4), 4, 2, dtype="f64")
    x = Tensor(rng(5).standard_normal((1, 6, 6, 4)), dtype="f64")
    got = conv_ffn(x, ffn)
    want = ffn.project(gelu(ffn.dw(gelu(ffn.expand(x)))))
    assert np.array_equal(got.data, want.data)


def test_conv_ffn_loop_oracle_small():
    # literal nested-loop evaluation of the whole expand/dw/project chain
    c, ratio = 2, 2
    hidden = c * ratio
    ffn = FFNParams(rng(6), c, ratio, dtype="f64")
    x = rng(7).standard_normal((1, 3, 3, c))

    def conv_loop(inp, w, b, groups):
        kh, kw, _, cout = w.shape
        hh, ww, cin = inp.shape
        out = np.zeros((hh, ww, cout))
        cg_in, cg_out = cin // groups, cout // groups
        for y in range(hh):
            for xx in range(ww):
                for oc in range(cout):
                    gidx = oc // cg_out
                    acc = b[oc]
                    for ky in range(kh):
                        for kx in range(kw):
                            iy, ix = y + ky - kh // 2, xx + kx - kw // 2
                            if 0 <= iy < hh and 0 <= ix < ww:
                                for ic in range(cg_in):
                                    acc += inp[iy, ix, gidx * cg_in + ic] * w[ky, kx, ic, oc]
                    out[y, xx, oc] = acc
        return out

    def gelu_np(v):
        return 0.5 * v * (1 + np.tanh(np.sqrt(2 / np.pi) * (v + 0.044715 * v ** 3)))

    t = gelu_np(conv_loop(x[0], ffn.expand.w.data, ffn.expand.b.data, 1))
    t = gelu_np(conv_loop(t, ffn.dw.w.data, ffn.dw.b.data, hidden))
    want = conv_loop(t, ffn.project.w.data, ffn.project.b.data, 1)
    got = conv_ffn(Tensor(x, dtype="f64"), ffn).data[0]
    assert np.max(np.abs(got - want)) < 1e-6


def test_conv_ffn_spatial_identity_mode_skips_depthwise():
    ffn = FFNParams(rng(8), 4, 2, dtype="f64", spatial_identity=True)
    x = Tensor(rng(9).standard_normal((1, 4, 4, 4)), dtype="f64")
    got = conv_ffn(x, ffn)
    want = ffn.project(gelu(gelu(ffn.expand(x))))
    assert np.array_equal(got.data, want.data)


def test_hiir_layer_zero_branches_is_identity():
    geom = WindowGeom(8, 8, 2, 2)
    for variant in ("v1", "v2", "v3", "v4"):
        layer = build_variant(variant, 8, 2, 2, geom, 1, rng(10), dtype="f64")[0]
        zero_branches(layer)
        x = Tensor(rng(11).standard_normal((1, 8, 8, 8)), dtype="f64")
        out = hiir_layer(x, layer, geom)
        assert np.array_equal(out.data, x.data), variant


def test_hiir_layer_shape_contract():
    geom = WindowGeom(4, 8, 2, 2)
    layer = build_variant("v3", 8, 2, 2, geom, 1, rng(12))[0]
    for b in (1, 3):
        x = Tensor(rng(13).standard_normal((b, 4, 8, 8)).astype(np.float32))
        assert hiir_layer(x, layer, geom).shape == x.shape


def test_hiir_layer_equals_manual_composition():
    from hiflow.layer import LN_EPS
    geom = WindowGeom(4, 4, 2, 2)
    layer = build_variant("v3", 8, 2, 2, geom, 1, rng(14), dtype="f64")[0]
    x = Tensor(rng(15).standard_normal((1, 4, 4, 8)), dtype="f64")
    got = hiir_layer(x, layer, geom)
    n1 = layer_norm(x, layer.norm1.gamma, layer.norm1.beta, LN_EPS)
    x1 = x + tifm_att(n1, geom, layer.att1, layer.att2, "v3") * 1.0
    n2 = layer_norm(x1, layer.norm2.gamma, layer.norm2.beta, LN_EPS)
    want = x1 + conv_ffn(n2, layer.ffn) * 1.0
    assert np.array_equal(got.data, want.data)


def test_hiir_layer_full_gradient():
    geom = WindowGeom(4, 4, 2, 2)
    layer = build_variant("v3", 8, 2, 2, geom, 1, rng(16), dtype="f64")[0]
    x = Tensor(rng(17).standard_normal((1, 4, 4, 8)), dtype="f64")
    assert grad_check(lambda t: hiir_layer(t, layer, geom).abs().sum(), x) < 1e-5


def test_build_variant_v1_alternates():
    geom = WindowGeom(4, 4, 2, 2)
    layers = build_variant("v1", 8, 2, 2, geom, 4, rng(18))
    assert [l.att_mode for l in layers] == ["v1_l1", "v1_l2", "v1_l1", "v1_l2"]


def test_variant_parameter_ordering():
    geom = WindowGeom(4, 4, 2, 2)
    counts = {}
    for variant in ("v1", "v2", "v3", "v4"):
        layers = build_variant(variant, 16, 2, 2, geom, 2, rng(19))
        counts[variant] = sum(l.param_count() for l in layers)
    assert counts["v3"] < counts["v2"]
    assert counts["v4"] > counts["v3"]
    assert counts["v1"] < counts["v3"]


def test_v3_attention_projection_cost():
    # per layer: four half-width Q/K maps + two value maps + one output map
    c = 16
    geom = WindowGeom(4, 4, 2, 2)
    layer = build_variant("v3", c, 2, 2, geom, 1, rng(20))[0]
    att_weights = sum(p.size for name, p in layer.named_params()
                      if name.startswith("att"))
    assert att_weights == 5 * c * c


def test_build_variant_shift_on_alternating_layers():
    geom = WindowGeom(8, 8, 2, 2)
    layers = build_variant("v3", 8, 2, 2, geom, 4, rng(21), shift=True)
    assert [l.use_shift for l in layers] == [False, True, False, True]


def test_build_variant_rejects_unknown():
    with pytest.raises(ConfigurationError):
        build_variant("v7", 8, 2, 2, WindowGeom(4, 4, 2, 2), 1, rng(22))


def test_halved_qk_needs_even_split():
    with pytest.raises(ConfigurationError):
        TIFMLayer(rng(23), 6, 2, 2, "v3")


def test_checkpoint_roundtrip_layer(tmp_path):
    from hiflow.serialize import load_checkpoint, save_checkpoint
    geom = WindowGeom(4, 4, 2, 2)
    layer = build_variant("v3", 8, 2, 2, geom, 1, rng(24))[0]
    path = tmp_path / "layer.ckpt"
    save_checkpoint(path, layer.state_arrays())
    state = load_checkpoint(path)
    fresh = build_variant("v3", 8, 2, 2, geom, 1, rng(99))[0]
    fresh.load_state(state)
    x = Tensor(rng(25).standard_normal((1, 4, 4, 8)).astype(np.float32))
    assert np.array_equal(hiir_layer(x, layer, geom).data,
                          hiir_layer(x, fresh, geom).data)
