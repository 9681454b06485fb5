import numpy as np
import pytest

from hiflow.attention import (AttentionParams, WindowGeom, l2_permute, l2_unpermute,
                              mha, score_gradients, tifm_att, window_partition,
                              window_reverse)
from hiflow.errors import (ConfigurationError, DimensionError, DomainError,
                           GeometryError)
from hiflow.tensor import Tensor, grad_check, matmul, softmax_lastdim


def rng(seed=0):
    return np.random.default_rng(seed)


def coded_image(b, h, w, c=1):
    """Each pixel carries a unique code so destinations are recoverable."""
    return np.arange(b * h * w * c, dtype=np.float64).reshape(b, h, w, c)


# -- window partition ----------------------------------------------------------

def test_window_partition_single_window():
    x = Tensor(rng(1).standard_normal((1, 3, 3, 2)))
    out = window_partition(x, WindowGeom(3, 3, 3, 1))
    assert out.shape == (1, 9, 2)
    assert np.array_equal(out.data.reshape(1, 3, 3, 2), x.data)


def test_window_partition_index_oracle():
    # independent arithmetic: window = (y//p)*(W//p) + x//p, slot = (y%p)*p + x%p
    h = w = 4
    p = 2
    geom = WindowGeom(h, w, p, 2)
    x = coded_image(1, h, w)
    out = window_partition(Tensor(x, dtype="f64"), geom).data
    for y in range(h):
        for xx in range(w):
            win = (y // p) * (w // p) + xx // p
            slot = (y % p) * p + xx % p
            assert out[win, slot, 0] == x[0, y, xx, 0]
    # the worked case: pixel (0,3) lands in window 1, slot 1
    assert out[1, 1, 0] == x[0, 0, 3, 0]


def test_window_roundtrip_bitwise():
    r = rng(2)
    for _ in range(25):
        p = int(r.integers(1, 5))
        h = p * int(r.integers(1, 5))
        w = p * int(r.integers(1, 5))
        b = int(r.integers(1, 3))
        geom = WindowGeom(h, w, p, 1)
        x = Tensor(r.standard_normal((b, h, w, 3)).astype(np.float32))
        back = window_reverse(window_partition(x, geom), geom, b)
        assert np.array_equal(back.data, x.data)


def test_window_partition_divisibility_error():
    with pytest.raises(GeometryError):
        window_partition(Tensor(np.zeros((1, 5, 4, 1))), WindowGeom(5, 4, 2, 1))


# -- l2 permute ------------------------------------------------------------------

def test_l2_permute_degenerate_s1():
    geom = WindowGeom(4, 4, 2, 1)
    x = Tensor(rng(3).standard_normal((1, 4, 4, 2)))
    out = l2_permute(x, geom)
    assert out.shape == (16, 1, 2)  # singleton groups: attention over them mixes nothing


def test_l2_permute_p1_equals_window_partition():
    geom = WindowGeom(6, 6, 1, 3)
    x = Tensor(rng(4).standard_normal((2, 6, 6, 4)))
    got = l2_permute(x, geom)
    want = window_partition(x, WindowGeom(6, 6, 3, 1))
    assert np.array_equal(got.data, want.data)


def test_l2_permute_group_membership_oracle():
    # group id = ((bi*(W/P) + bj)*p + pi)*p + pj, token = si*s + sj
    h = w = 8
    p, s = 2, 2
    bk = p * s
    geom = WindowGeom(h, w, p, s)
    x = coded_image(1, h, w)
    out = l2_permute(Tensor(x, dtype="f64"), geom).data
    for y in range(h):
        for xx in range(w):
            bi, bj = y // bk, xx // bk
            si, pi = (y % bk) // p, (y % bk) % p
            sj, pj = (xx % bk) // p, (xx % bk) % p
            group = ((bi * (w // bk) + bj) * p + pi) * p + pj
            token = si * s + sj
            assert out[group, token, 0] == x[0, y, xx, 0]


def test_l2_permute_worked_group():
    geom = WindowGeom(4, 4, 2, 2)
    x = coded_image(1, 4, 4)
    out = l2_permute(Tensor(x, dtype="f64"), geom).data
    codes = {x[0, y, xx, 0] for y, xx in [(0, 0), (0, 2), (2, 0), (2, 2)]}
    assert set(out[0, :, 0].tolist()) == codes


def test_l2_roundtrip_bitwise():
    r = rng(5)
    for _ in range(25):
        p = int(r.integers(1, 4))
        s = int(r.integers(1, 4))
        bk = p * s
        h = bk * int(r.integers(1, 4))
        w = bk * int(r.integers(1, 4))
        b = int(r.integers(1, 3))
        geom = WindowGeom(h, w, p, s)
        x = Tensor(r.standard_normal((b, h, w, 2)).astype(np.float32))
        back = l2_unpermute(l2_permute(x, geom), geom, b)
        assert np.array_equal(back.data, x.data)


def test_l2_divisibility_error():
    with pytest.raises(GeometryError):
        l2_permute(Tensor(np.zeros((1, 6, 6, 1))), WindowGeom(6, 6, 2, 2))


def test_geom_validation():
    with pytest.raises(GeometryError):
        WindowGeom(8, 8, 4, 2, shift=1)  # shift must be 0 or p//2


# -- mha ---------------------------------------------------------------------------

def _params(c=8, heads=2, seed=0, **kw):
    return AttentionParams(rng(seed), c, heads, dtype="f64", **kw)


def test_mha_single_token_bypasses_scores():
    p = _params()
    tok = Tensor(rng(6).standard_normal((3, 1, 8)), dtype="f64")
    out = mha(tok, p)
    want = matmul(matmul(tok, p.wv), p.wo)
    assert np.allclose(out.data, want.data, atol=1e-12)
    p_cos = _params(score_kind="cosine")
    p_cos.wv, p_cos.wo = p.wv, p.wo
    assert np.allclose(mha(tok, p_cos).data, want.data, atol=1e-12)


def test_mha_identical_keys_average_values():
    p = _params(with_out=False)
    row = rng(7).standard_normal(8)
    tok = Tensor(np.tile(row, (1, 5, 1)), dtype="f64")
    out = mha(tok, p)
    v = matmul(tok, p.wv).data
    assert np.allclose(out.data, v.mean(axis=1, keepdims=True).repeat(5, 1), atol=1e-10)


def test_mha_matches_naive_loop_oracle():
    c, heads = 6, 1
    p = _params(c=c, heads=heads, seed=8)
    tok = rng(9).standard_normal((1, 3, c))
    out = mha(Tensor(tok, dtype="f64"), p).data

    q = tok[0] @ p.wq.data
    k = tok[0] @ p.wk.data
    v = tok[0] @ p.wv.data
    want = np.zeros((3, c))
    for i in range(3):
        scores = np.array([q[i] @ k[j] / np.sqrt(c) for j in range(3)])
        e = np.exp(scores - scores.max())
        a = e / e.sum()
        want[i] = sum(a[j] * v[j] for j in range(3))
    want = want @ p.wo.data
    assert np.max(np.abs(out[0] - want)) < 1e-6


def test_mha_permutation_equivariant():
    p = _params(seed=10)
    tok = rng(11).standard_normal((2, 6, 8))
    perm = rng(12).permutation(6)
    out = mha(Tensor(tok, dtype="f64"), p).data
    out_p = mha(Tensor(tok[:, perm], dtype="f64"), p).data
    assert np.allclose(out[:, perm], out_p, atol=1e-10)


@pytest.mark.parametrize("kind", ["dot", "cosine"])
def test_mha_attention_rows_sum_to_one(kind):
    # with a value tensor constant across tokens, the output equals that
    # constant iff each attention row sums to 1
    from hiflow.attention import attention_core
    r = rng(14)
    q = Tensor(r.standard_normal((4, 7, 8)).astype(np.float32))
    k = Tensor(r.standard_normal((4, 7, 8)).astype(np.float32))
    v = Tensor(np.broadcast_to(r.standard_normal((4, 1, 8)), (4, 7, 8)).astype(np.float32).copy())
    out = attention_core(q, k, v, heads=2, score_kind=kind).data
    assert np.max(np.abs(out - v.data)) < 1e-5


def test_mha_head_divisibility_error():
    with pytest.raises(ConfigurationError):
        AttentionParams(rng(0), 8, 3)


def test_cosine_scale_invariance():
    p = _params(score_kind="cosine", seed=15)
    tok = rng(16).standard_normal((2, 5, 8))
    base = mha(Tensor(tok, dtype="f64"), p).data
    # scaling all queries by c > 0 leaves the output unchanged; here the
    # query projection is scaled, which scales every query vector.
    p.wq = Tensor(p.wq.data * 37.0, dtype="f64")
    out = mha(Tensor(tok, dtype="f64"), p).data
    assert np.max(np.abs(out - base)) < 1e-6


def test_dot_attention_not_scale_invariant():
    p = _params(score_kind="dot", seed=17)
    tok = rng(18).standard_normal((1, 5, 8))
    base = mha(Tensor(tok, dtype="f64"), p).data
    p.wq = Tensor(p.wq.data * 37.0, dtype="f64")
    assert np.max(np.abs(mha(Tensor(tok, dtype="f64"), p).data - base)) > 1e-4


def test_mha_gradients():
    p = _params(seed=19)
    x = Tensor(rng(20).standard_normal((2, 4, 8)), dtype="f64")
    assert grad_check(lambda t: mha(t, p).abs().sum(), x) < 1e-6
    p_cos = _params(score_kind="cosine", seed=21)
    assert grad_check(lambda t: mha(t, p_cos).abs().sum(), x) < 1e-6


# -- tifm variants -------------------------------------------------------------------

def _v3_params(c=8, heads=2, seed=0):
    r = rng(seed)
    l1 = AttentionParams(r, c, heads, dtype="f64", qk_dim=c // 2, with_out=False)
    l2 = AttentionParams(r, c, heads, dtype="f64", qk_dim=c // 2)
    return l1, l2


def test_tifm_v1_l1_equals_windowed_mha():
    geom = WindowGeom(8, 8, 2, 2)
    p = _params(seed=22)
    x = Tensor(rng(23).standard_normal((1, 8, 8, 8)), dtype="f64")
    got = tifm_att(x, geom, p, None, "v1_l1")
    want = window_reverse(mha(window_partition(x, geom), p), geom, 1)
    assert np.max(np.abs(got.data - want.data)) < 1e-6


def test_tifm_zero_wo_zero_output():
    geom = WindowGeom(8, 8, 2, 2)
    for variant in ("v1_l1", "v1_l2", "v2", "v3"):
        l1 = _params(seed=24)
        l2 = _params(seed=25)
        v3l1, v3l2 = _v3_params(seed=26)
        if variant == "v3":
            p1, p2 = v3l1, v3l2
        else:
            p1, p2 = l1, l2
        final = p2 if variant in ("v1_l2", "v2", "v3") else p1
        final.wo = Tensor(np.zeros_like(final.wo.data), dtype="f64")
        x = Tensor(rng(27).standard_normal((1, 8, 8, 8)), dtype="f64")
        assert np.all(tifm_att(x, geom, p1, p2, variant).data == 0.0)


def test_tifm_v3_full_block_mixing_on_single_block():
    # H = W = P: the composed L1+L2 footprint of any pixel is the whole image.
    geom = WindowGeom(4, 4, 2, 2)
    l1, l2 = _v3_params(seed=28)
    x = Tensor(rng(29).standard_normal((1, 4, 4, 8)), dtype="f64", requires_grad=True)
    out = tifm_att(x, geom, l1, l2, "v3")
    seed = np.zeros(out.shape)
    seed[0, 1, 2, :] = 1.0
    out.backward(seed)
    assert np.all(np.max(np.abs(x.grad[0]), axis=-1) > 0.0)


def test_tifm_v4_runs_and_expands_scope():
    geom = WindowGeom(8, 8, 2, 2)   # block 4, level-3 grid 2 -> needs 8 | extents
    r = rng(30)
    l1 = AttentionParams(r, 8, 2, dtype="f64", qk_dim=4, with_out=False)
    l2 = AttentionParams(r, 8, 2, dtype="f64", qk_dim=4, with_out=False)
    l3 = AttentionParams(r, 8, 2, dtype="f64", qk_dim=4)
    x = Tensor(r.standard_normal((1, 8, 8, 8)), dtype="f64", requires_grad=True)
    out = tifm_att(x, geom, l1, l2, "v4", params_l3=l3)
    assert out.shape == x.shape
    seed = np.zeros(out.shape)
    seed[0, 0, 0, :] = 1.0
    out.backward(seed)
    assert np.all(np.max(np.abs(x.grad[0]), axis=-1) > 0.0)  # full 8x8 coverage


def test_tifm_unknown_variant():
    with pytest.raises(ConfigurationError):
        tifm_att(Tensor(np.zeros((1, 4, 4, 8))), WindowGeom(4, 4, 2, 2),
                 None, None, "v9")


def test_shift_roundtrip_preserves_shape_and_grad():
    geom = WindowGeom(8, 8, 4, 2, shift=2)
    p = _params(seed=31)
    x = Tensor(rng(32).standard_normal((1, 8, 8, 8)), dtype="f64")
    out = tifm_att(x, geom, p, None, "v1_l1")
    assert out.shape == x.shape
    assert grad_check(lambda t: tifm_att(t, geom, p, None, "v1_l1").abs().sum(),
                      x) < 1e-6


# -- score gradients ------------------------------------------------------------------

def test_score_gradient_dot_is_key():
    out = score_gradients(Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 4.0])), "dot")
    assert out.data.tolist() == [3.0, 4.0]


def test_score_gradient_cosine_at_maximum():
    q = Tensor(np.array([1.0, 2.0]))
    assert np.max(np.abs(score_gradients(q, q, "cosine").data)) < 1e-12


def test_score_gradient_cosine_orthogonal():
    out = score_gradients(Tensor(np.array([1.0, 0.0])), Tensor(np.array([0.0, 1.0])),
                          "cosine")
    assert np.allclose(out.data, [0.0, 1.0], atol=1e-12)


def test_score_gradient_cosine_finite_difference():
    r = rng(33)
    q = r.standard_normal(6)
    k = r.standard_normal(6)
    got = score_gradients(Tensor(q), Tensor(k), "cosine").data
    h = 1e-6

    def cos(qv):
        return float(qv @ k / (np.linalg.norm(qv) * np.linalg.norm(k)))

    num = np.zeros(6)
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        num[i] = (cos(q + e) - cos(q - e)) / (2 * h)
    assert np.max(np.abs(got - num)) < 1e-8


def test_score_gradient_norm_bound_and_scaling():
    r = rng(34)
    for _ in range(50):
        q = r.standard_normal(8)
        k = r.standard_normal(8)
        g = score_gradients(Tensor(q), Tensor(k), "cosine").data
        assert np.linalg.norm(g) <= 2.0 / np.linalg.norm(q) + 1e-12
        g_small = score_gradients(Tensor(q * 1e-3), Tensor(k), "cosine").data
        ratio = np.linalg.norm(g_small) / np.linalg.norm(g)
        assert abs(ratio - 1e3) < 10.0  # within 1%
        d = score_gradients(Tensor(q, ), Tensor(k), "dot").data
        d_small = score_gradients(Tensor(q * 1e-3), Tensor(k), "dot").data
        assert np.max(np.abs(d - d_small)) < 1e-9


def test_score_gradient_zero_norm_rejected():
    with pytest.raises(DomainError):
        score_gradients(Tensor(np.zeros(3)), Tensor(np.ones(3)), "cosine")


def test_score_gradient_shape_mismatch():
    with pytest.raises(DimensionError):
        score_gradients(Tensor(np.zeros(3)), Tensor(np.ones(4)), "dot")
