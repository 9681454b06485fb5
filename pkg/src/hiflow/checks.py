"""Fast invariant battery backing ``hiflow check``.

Each entry runs in well under a second and raises AssertionError on
violation; the CLI prints one pass/fail line per group.  The pytest suite
covers the same ground (and more) at full depth.
"""

from __future__ import annotations

import io

import numpy as np

from .attention import (WindowGeom, l2_permute, l2_unpermute, score_gradients,
                        window_partition, window_reverse)
from .layer import build_variant, hiir_layer, zero_branches
from .model import HiIRConfig, ConvBlock, build_columnar, build_ushape, make_identity
from .pipeline import psnr
from .scaling import WarmupSchedule, lr_at
from .serialize import hift_bytes, read_hift
from .tensor import Tensor, conv2d, grad_check, matmul, softmax_lastdim


def _rng(seed=0):
    return np.random.default_rng(seed)


def check_permutation_roundtrips():
    rng = _rng(1)
    for _ in range(20):
        p = int(rng.integers(1, 5))
        s = int(rng.integers(1, 5))
        block = p * s
        h = block * int(rng.integers(1, 4))
        w = block * int(rng.integers(1, 4))
        geom = WindowGeom(h, w, p, s)
        x = Tensor(rng.standard_normal((2, h, w, 3)).astype(np.float32))
        assert np.array_equal(window_reverse(window_partition(x, geom), geom, 2).data, x.data)
        assert np.array_equal(l2_unpermute(l2_permute(x, geom), geom, 2).data, x.data)


def check_softmax_rows():
    x = Tensor(_rng(2).uniform(-50, 50, (64, 9)).astype(np.float32))
    sums = softmax_lastdim(x).data.sum(axis=-1)
    assert np.max(np.abs(sums - 1.0)) < 1e-5


def check_conv1x1_is_matmul():
    rng = _rng(3)
    x = Tensor(rng.standard_normal((2, 5, 4, 6)).astype(np.float32))
    w = Tensor(rng.standard_normal((1, 1, 6, 3)).astype(np.float32))
    via_conv = conv2d(x, w).data.reshape(-1, 3)
    via_mm = matmul(x.reshape(-1, 6).reshape(40, 6), w.reshape(6, 3)).data
    assert np.max(np.abs(via_conv - via_mm)) < 1e-6


def check_gradients():
    rng = _rng(4)
    x = Tensor(rng.standard_normal((2, 3, 4)), dtype="f64")
    w = Tensor(rng.standard_normal((2, 3, 4)), dtype="f64")
    assert grad_check(lambda t: t.sum(), x) < 1e-10
    assert grad_check(lambda t: (softmax_lastdim(t) * w).sum(), x) < 1e-6
    geom = WindowGeom(4, 4, 2, 2)
    layer = build_variant("v3", 8, 2, 2, geom, 1, _rng(5), dtype="f64")[0]
    xl = Tensor(rng.standard_normal((1, 4, 4, 8)), dtype="f64")
    assert grad_check(lambda t: hiir_layer(t, layer, geom).sum(), xl) < 1e-5


def check_score_gradient_scaling():
    rng = _rng(6)
    q = rng.standard_normal(8)
    k = rng.standard_normal(8)
    g_dot = score_gradients(Tensor(q), Tensor(k), "dot").data
    g_dot_small = score_gradients(Tensor(q * 1e-3), Tensor(k), "dot").data
    assert np.max(np.abs(g_dot - g_dot_small)) < 1e-9
    n_cos = np.linalg.norm(score_gradients(Tensor(q), Tensor(k), "cosine").data)
    n_cos_small = np.linalg.norm(score_gradients(Tensor(q * 1e-3), Tensor(k), "cosine").data)
    assert abs(n_cos_small / n_cos - 1e3) < 0.01 * 1e3


def check_analytic_worked_value():
    from .analysis import analytic_complexity
    rep = analytic_complexity("proposed", 1, 64, 64, 16, p=8, s=2, gamma=2, heads=2)
    assert rep.time_total == 16_121_856, rep.time_total


def check_plateau_ratios():
    from .analysis import window_plateau_harness
    rows = window_plateau_harness(HiIRConfig(), [8, 16, 32])
    att = {p: a for p, a, _, _ in rows}
    assert att[16] == 4 * att[8] and att[32] == 16 * att[8]


def check_warmup():
    sched = WarmupSchedule(2e-4, 500)
    assert lr_at(sched, 0) == 2e-4 / 500
    assert lr_at(sched, 500) == 2e-4
    assert lr_at(sched, 250) == 1e-4
    assert lr_at(sched, 501) == 2e-4


def check_conv_block_ordering():
    for c in (16, 32, 64):
        rng = _rng(7)
        counts = {k: ConvBlock(rng, k, c).weight_param_count()
                  for k in ("conv1", "linear", "conv3")}
        assert counts["linear"] < counts["conv3"] < counts["conv1"]


def check_ushape_identity():
    cfg = HiIRConfig(task="denoise", scale=1, channels=8, heads=2, p=2, s=2,
                     layers_per_stage=1)
    model = make_identity(build_ushape(cfg))
    x = _rng(8).random((1, 32, 32, 3)).astype(np.float32)
    out = model.forward(Tensor(x))
    assert np.array_equal(out.data, x)


def check_columnar_shape():
    cfg = HiIRConfig(task="sr", scale=2, channels=8, heads=2, p=2, s=2,
                     layers_per_stage=1)
    model = build_columnar(cfg)
    out = model.forward(Tensor(_rng(9).random((1, 16, 16, 3)).astype(np.float32)))
    assert out.shape == (1, 32, 32, 3), out.shape


def check_hift_roundtrip():
    arr = _rng(10).standard_normal((3, 5, 2)).astype(np.float32)
    back = read_hift(io.BytesIO(hift_bytes(arr)))
    assert np.array_equal(arr, back) and back.dtype == arr.dtype


def check_psnr():
    a = np.full((8, 8, 3), 0.5, dtype=np.float32)
    assert psnr(a, a) == 99.0
    b = a + 10.0 / 255.0
    assert abs(psnr(a, b) - 20 * np.log10(255 / 10)) < 1e-9


CHECKS = [
    ("permutation-roundtrips", check_permutation_roundtrips),
    ("softmax-rows", check_softmax_rows),
    ("conv1x1-matmul", check_conv1x1_is_matmul),
    ("gradients", check_gradients),
    ("score-gradient-scaling", check_score_gradient_scaling),
    ("analytic-worked-value", check_analytic_worked_value),
    ("plateau-ratios", check_plateau_ratios),
    ("warmup", check_warmup),
    ("conv-block-ordering", check_conv_block_ordering),
    ("ushape-identity", check_ushape_identity),
    ("columnar-shape", check_columnar_shape),
    ("hift-roundtrip", check_hift_roundtrip),
    ("psnr", check_psnr),
]
