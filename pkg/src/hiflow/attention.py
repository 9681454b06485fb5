"""Hierarchical window attention: local windows, permuted cross-window groups.

Level 1 runs multi-head attention inside p x p windows.  Level 2 regroups
pixels so that each group holds the s^2 pixels of one P x P block (P = s*p)
that share the same intra-window offset - a stride-p lattice - and attends
over those.  Stacking both levels lets every output pixel see its whole
enclosing P x P block without ever forming a P^2-token attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, DomainError, GeometryError
from .params import ParamBundle, linear_weight
from .tensor import Tensor, matmul, roll2d, softmax_lastdim

SCORE_KINDS = ("dot", "cosine")


@dataclass(frozen=True)
class WindowGeom:
    """Window geometry: image extents, window side p, window-grid side s.

    ``block`` (the P of the hierarchy) is ``s * p`` pixels.  ``shift`` is a
    cyclic pre-roll in pixels, either 0 or p // 2.
    """

    h: int
    w: int
    p: int
    s: int
    shift: int = 0

    def __post_init__(self):
        if self.p < 1 or self.s < 1:
            raise GeometryError(f"p={self.p}, s={self.s} must be positive")
        if self.shift not in (0, self.p // 2):
            raise GeometryError(f"shift must be 0 or p//2={self.p // 2}, got {self.shift}")

    @property
    def block(self) -> int:
        return self.s * self.p

    def require_windows(self) -> None:
        if self.h % self.p or self.w % self.p:
            raise GeometryError(
                f"extents ({self.h},{self.w}) not divisible by window side p={self.p}")

    def require_blocks(self) -> None:
        if self.h % self.block or self.w % self.block:
            raise GeometryError(
                f"extents ({self.h},{self.w}) not divisible by block side P={self.block}")


def _check_image(x: Tensor, geom: WindowGeom) -> None:
    if x.ndim != 4:
        raise DimensionError(f"expected (B,H,W,C), got {x.shape}")
    if x.shape[1] != geom.h or x.shape[2] != geom.w:
        raise GeometryError(f"tensor extents {x.shape[1:3]} != geometry ({geom.h},{geom.w})")


def window_partition(x: Tensor, geom: WindowGeom) -> Tensor:
    """(B,H,W,C) -> (B*HW/p^2, p^2, C); windows ordered row-major per image."""
    _check_image(x, geom)
    geom.require_windows()
    b, h, w, c = x.shape
    p = geom.p
    y = x.reshape(b, h // p, p, w // p, p, c)
    y = y.transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(b * (h // p) * (w // p), p * p, c)


def window_reverse(tokens: Tensor, geom: WindowGeom, batch: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    geom.require_windows()
    h, w, p = geom.h, geom.w, geom.p
    c = tokens.shape[-1]
    y = tokens.reshape(batch, h // p, w // p, p, p, c)
    y = y.transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(batch, h, w, c)


def l2_permute(x: Tensor, geom: WindowGeom) -> Tensor:
    """(B,H,W,C) -> (B*(H/P)(W/P)p^2, s^2, C) stride-p lattice groups.

    Group (bi, bj, pi, pj) collects the s^2 pixels
    ``(bi*P + si*p + pi, bj*P + sj*p + pj)`` for all (si, sj); tokens are
    ordered row-major in (si, sj).
    """
    _check_image(x, geom)
    geom.require_blocks()
    b, h, w, c = x.shape
    p, s, bk = geom.p, geom.s, geom.block
    y = x.reshape(b, h // bk, s, p, w // bk, s, p, c)
    y = y.transpose(0, 1, 4, 3, 6, 2, 5, 7)       # (B, Hb, Wb, p, p, s, s, C)
    return y.reshape(b * (h // bk) * (w // bk) * p * p, s * s, c)


def l2_unpermute(tokens: Tensor, geom: WindowGeom, batch: int) -> Tensor:
    """Inverse of :func:`l2_permute`."""
    geom.require_blocks()
    h, w, p, s, bk = geom.h, geom.w, geom.p, geom.s, geom.block
    c = tokens.shape[-1]
    y = tokens.reshape(batch, h // bk, w // bk, p, p, s, s, c)
    y = y.transpose(0, 1, 5, 3, 2, 6, 4, 7)       # (B, Hb, s, p, Wb, s, p, C)
    return y.reshape(batch, h, w, c)


class AttentionParams(ParamBundle):
    """Projections and score configuration for one multi-head attention.

    ``qk_dim`` is the total query/key width; the halved-QK variants pass
    ``c // 2`` while the value width stays ``c``.  ``wo`` may be None for
    attentions whose output feeds the next level unprojected.
    """

    def __init__(self, rng: np.random.Generator, c: int, heads: int, dtype="f32",
                 qk_dim: int | None = None, score_kind: str = "dot",
                 tau: float = 0.1, with_out: bool = True):
        qk_dim = c if qk_dim is None else qk_dim
        if c % heads or qk_dim % heads:
            raise ConfigurationError(
                f"channels {c} and qk width {qk_dim} must divide heads={heads}")
        if score_kind not in SCORE_KINDS:
            raise ConfigurationError(f"score_kind must be one of {SCORE_KINDS}")
        if tau <= 0:
            raise ConfigurationError(f"tau must be positive, got {tau}")
        self.heads = heads
        self.score_kind = score_kind
        self.tau = tau
        self.wq = linear_weight(rng, c, qk_dim, dtype)
        self.wk = linear_weight(rng, c, qk_dim, dtype)
        self.wv = linear_weight(rng, c, c, dtype)
        self.wo = linear_weight(rng, c, c, dtype) if with_out else None


def _split_heads(x: Tensor, heads: int) -> Tensor:
    g, t, d = x.shape
    return x.reshape(g, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    g, h, t, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(g, t, h * d)


def _normalize_lastdim(x: Tensor) -> Tensor:
    # 1e-24 under the square root guards exact-zero rows; it perturbs the
    # direction of any realistic vector by far less than float32 epsilon.
    sumsq = (x * x).sum(axis=-1, keepdims=True)
    return x / (sumsq + 1e-24).sqrt()


def attention_core(q: Tensor, k: Tensor, v: Tensor, heads: int,
                   score_kind: str = "dot", tau: float = 0.1) -> Tensor:
    """Multi-head attention over grouped tokens; inputs are (G, T, width)."""
    if q.shape[-1] % heads or v.shape[-1] % heads:
        raise ConfigurationError(
            f"widths {q.shape[-1]}/{v.shape[-1]} not divisible by heads={heads}")
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    if score_kind == "dot":
        scale = 1.0 / math.sqrt(qh.shape[-1])
        scores = matmul(qh, kh.transpose(0, 1, 3, 2)) * scale
    elif score_kind == "cosine":
        scores = matmul(_normalize_lastdim(qh),
                        _normalize_lastdim(kh).transpose(0, 1, 3, 2)) * (1.0 / tau)
    else:
        raise ConfigurationError(f"score_kind must be one of {SCORE_KINDS}")
    attn = softmax_lastdim(scores)
    return _merge_heads(matmul(attn, vh))


def mha(tokens: Tensor, params: AttentionParams) -> Tensor:
    """Project, attend per group, merge heads, optionally output-project."""
    if tokens.ndim != 3:
        raise DimensionError(f"expected (G,T,C) tokens, got {tokens.shape}")
    if tokens.shape[-1] != params.wq.shape[0]:
        raise DimensionError(
            f"token width {tokens.shape[-1]} != projection input {params.wq.shape[0]}")
    q = matmul(tokens, params.wq)
    k = matmul(tokens, params.wk)
    v = matmul(tokens, params.wv)
    out = attention_core(q, k, v, params.heads, params.score_kind, params.tau)
    if params.wo is not None:
        out = matmul(out, params.wo)
    return out


VARIANTS = ("v1_l1", "v1_l2", "v2", "v3", "v4")


def tifm_att(x: Tensor, geom: WindowGeom, params_l1: AttentionParams | None,
             params_l2: AttentionParams | None, variant: str,
             params_l3: AttentionParams | None = None) -> Tensor:
    """Hierarchical information-flow attention over a (B,H,W,C) feature map.

    v1_l1 / v1_l2 run a single level (the layer stack alternates them);
    v2 chains two full attentions; v3 drops the intermediate output
    projection and halves the Q/K widths, projecting the level-2 value
    stream from the level-1 output; v4 appends a third level over blocks
    of side ``geom.block`` on a grid of side 2.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    b = x.shape[0]
    if geom.shift:
        x = roll2d(x, -geom.shift, -geom.shift)

    if variant == "v1_l1":
        out = window_reverse(mha(window_partition(x, geom), params_l1), geom, b)
    elif variant == "v1_l2":
        out = l2_unpermute(mha(l2_permute(x, geom), params_l2), geom, b)
    elif variant == "v2":
        y = window_reverse(mha(window_partition(x, geom), params_l1), geom, b)
        out = l2_unpermute(mha(l2_permute(y, geom), params_l2), geom, b)
    else:  # v3 or v4
        t1 = window_partition(x, geom)
        y1 = attention_core(matmul(t1, params_l1.wq), matmul(t1, params_l1.wk),
                            matmul(t1, params_l1.wv), params_l1.heads,
                            params_l1.score_kind, params_l1.tau)
        y1 = window_reverse(y1, geom, b)
        t2 = l2_permute(y1, geom)
        y2 = attention_core(matmul(t2, params_l2.wq), matmul(t2, params_l2.wk),
                            matmul(t2, params_l2.wv), params_l2.heads,
                            params_l2.score_kind, params_l2.tau)
        if params_l2.wo is not None:
            y2 = matmul(y2, params_l2.wo)
        out = l2_unpermute(y2, geom, b)
        if variant == "v4":
            geom3 = WindowGeom(geom.h, geom.w, p=geom.block, s=2)
            t3 = l2_permute(out, geom3)
            y3 = attention_core(matmul(t3, params_l3.wq), matmul(t3, params_l3.wk),
                                matmul(t3, params_l3.wv), params_l3.heads,
                                params_l3.score_kind, params_l3.tau)
            if params_l3.wo is not None:
                y3 = matmul(y3, params_l3.wo)
            out = l2_unpermute(y3, geom3, b)

    if geom.shift:
        out = roll2d(out, geom.shift, geom.shift)
    return out


def score_gradients(q, k, kind: str) -> Tensor:
    """Gradient of the attention score w.r.t. the query vector.

    Dot product: d/dq (q . k) = k, independent of ||q||.  Cosine:
    d/dq cos(q,k) = (k_hat - cos(q,k) q_hat) / ||q||, which blows up as the
    query norm shrinks - the instability the score comparison measures.
    """
    qd = np.asarray(q.data if isinstance(q, Tensor) else q, dtype=np.float64)
    kd = np.asarray(k.data if isinstance(k, Tensor) else k, dtype=np.float64)
    if qd.ndim != 1 or kd.ndim != 1 or qd.shape != kd.shape or qd.size < 1:
        raise DimensionError(f"expected matching 1-D vectors, got {qd.shape}, {kd.shape}")
    if kind == "dot":
        return Tensor(kd.copy(), dtype="f64")
    if kind == "cosine":
        nq = float(np.linalg.norm(qd))
        nk = float(np.linalg.norm(kd))
        if nq == 0.0 or nk == 0.0:
            raise DomainError("cosine gradient undefined for zero-norm input")
        qh, khat = qd / nq, kd / nk
        cos = float(qh @ khat)
        return Tensor((khat - cos * qh) / nq, dtype="f64")
    raise ConfigurationError(f"kind must be one of {SCORE_KINDS}")
