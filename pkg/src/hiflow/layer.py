"""The restoration transformer layer: attention branch plus conv-FFN branch.

Each layer computes ``x' = x + att_scale * Att(LN(x))`` followed by
``out = x' + ffn_scale * FFN(LN(x'))``.  The FFN is a 1x1 expansion, a 3x3
depthwise convolution, and a 1x1 projection, with GELU after the first two.
The branch scales default to 1 and exist for the residual-rescale study.
"""

from __future__ import annotations

import numpy as np

from .attention import AttentionParams, WindowGeom, tifm_att
from .errors import ConfigurationError
from .params import ConvParams, LayerNormParams, ParamBundle
from .tensor import Tensor, gelu, layer_norm

LN_EPS = 1e-6

LAYER_VARIANTS = ("v1", "v2", "v3", "v4")


class FFNParams(ParamBundle):
    """Conv feed-forward: 1x1 expand -> GELU -> 3x3 depthwise -> GELU -> 1x1.

    ``spatial_identity`` swaps the depthwise conv for a pass-through so
    receptive-field assertions stay exact; ``linear`` drops both GELUs so an
    identity construction can be verified end to end.
    """

    def __init__(self, rng: np.random.Generator, c: int, ratio: int, dtype="f32",
                 spatial_identity: bool = False, linear: bool = False):
        if ratio < 1:
            raise ConfigurationError(f"ffn ratio must be >= 1, got {ratio}")
        hidden = c * ratio
        self.ratio = ratio
        self.spatial_identity = spatial_identity
        self.linear = linear
        self.expand = ConvParams(rng, 1, 1, c, hidden, dtype)
        self.dw = ConvParams(rng, 3, 3, hidden, hidden, dtype, groups=hidden)
        self.project = ConvParams(rng, 1, 1, hidden, c, dtype)


def conv_ffn(x: Tensor, ffn: FFNParams) -> Tensor:
    """Apply the conv feed-forward branch; spatial extents are preserved."""
    act = (lambda t: t) if ffn.linear else gelu
    y = act(ffn.expand(x))
    if not ffn.spatial_identity:
        y = ffn.dw(y)
    return ffn.project(act(y))


class TIFMLayer(ParamBundle):
    """Parameter bundle for one layer: norms, attention bundles, FFN."""

    def __init__(self, rng: np.random.Generator, c: int, heads: int, ratio: int,
                 att_mode: str, dtype="f32", score_kind: str = "dot",
                 tau: float = 0.1, use_shift: bool = False,
                 spatial_identity: bool = False):
        if att_mode not in ("v1_l1", "v1_l2", "v2", "v3", "v4"):
            raise ConfigurationError(f"unknown attention mode {att_mode!r}")
        if att_mode in ("v3", "v4") and c % (2 * heads):
            raise ConfigurationError(
                f"halved-QK mode needs channels divisible by 2*heads, got C={c}, h={heads}")
        self.att_mode = att_mode
        self.att_scale = 1.0
        self.ffn_scale = 1.0
        self.use_shift = use_shift
        self.norm1 = LayerNormParams(c, dtype)
        self.norm2 = LayerNormParams(c, dtype)
        kw = dict(score_kind=score_kind, tau=tau, dtype=dtype)
        half = c // 2
        if att_mode == "v1_l1":
            self.att1 = AttentionParams(rng, c, heads, **kw)
            self.att2 = None
            self.att3 = None
        elif att_mode == "v1_l2":
            self.att1 = None
            self.att2 = AttentionParams(rng, c, heads, **kw)
            self.att3 = None
        elif att_mode == "v2":
            self.att1 = AttentionParams(rng, c, heads, **kw)
            self.att2 = AttentionParams(rng, c, heads, **kw)
            self.att3 = None
        elif att_mode == "v3":
            self.att1 = AttentionParams(rng, c, heads, qk_dim=half, with_out=False, **kw)
            self.att2 = AttentionParams(rng, c, heads, qk_dim=half, **kw)
            self.att3 = None
        else:  # v4
            self.att1 = AttentionParams(rng, c, heads, qk_dim=half, with_out=False, **kw)
            self.att2 = AttentionParams(rng, c, heads, qk_dim=half, with_out=False, **kw)
            self.att3 = AttentionParams(rng, c, heads, qk_dim=half, **kw)
        self.ffn = FFNParams(rng, c, ratio, dtype, spatial_identity=spatial_identity)

    def final_projection(self) -> AttentionParams:
        return self.att3 or self.att2 or self.att1


def hiir_layer(x: Tensor, layer: TIFMLayer, geom: WindowGeom,
               variant: str | None = None) -> Tensor:
    """One full layer: attention branch then conv-FFN branch, both residual."""
    mode = layer.att_mode if variant is None else variant
    g = geom
    if layer.use_shift and geom.p >= 2:
        g = WindowGeom(geom.h, geom.w, geom.p, geom.s, shift=geom.p // 2)
    att_in = layer_norm(x, layer.norm1.gamma, layer.norm1.beta, LN_EPS)
    branch = tifm_att(att_in, g, layer.att1, layer.att2, mode, layer.att3)
    x1 = x + branch * layer.att_scale
    ffn_in = layer_norm(x1, layer.norm2.gamma, layer.norm2.beta, LN_EPS)
    return x1 + conv_ffn(ffn_in, layer.ffn) * layer.ffn_scale


def build_variant(variant: str, c: int, heads: int, ratio: int, geom: WindowGeom,
                  depth: int, rng: np.random.Generator, *, score_kind: str = "dot",
                  tau: float = 0.1, dtype="f32", shift: bool = False,
                  spatial_identity: bool = False) -> list[TIFMLayer]:
    """Construct the per-layer bundles for a stack of ``depth`` layers.

    v1 alternates single-level layers (L1, L2, L1, ...) so a depth-2 stack
    spans the same attention scope as one v3 layer; v2/v3/v4 place the whole
    hierarchy in every layer.  With ``shift`` on, odd layers pre-roll by p//2.
    """
    if variant not in LAYER_VARIANTS:
        raise ConfigurationError(f"variant must be one of {LAYER_VARIANTS}, got {variant!r}")
    if depth < 1:
        raise ConfigurationError(f"depth must be >= 1, got {depth}")
    layers = []
    for i in range(depth):
        if variant == "v1":
            mode = "v1_l1" if i % 2 == 0 else "v1_l2"
        else:
            mode = variant
        layers.append(TIFMLayer(
            rng, c, heads, ratio, mode, dtype=dtype, score_kind=score_kind, tau=tau,
            use_shift=shift and i % 2 == 1, spatial_identity=spatial_identity))
    return layers


def zero_branches(layer: TIFMLayer) -> TIFMLayer:
    """Zero both branch output projections, making the layer an identity."""
    proj = layer.final_projection()
    proj.wo.data[...] = 0.0
    layer.ffn.project.w.data[...] = 0.0
    layer.ffn.project.b.data[...] = 0.0
    return layer
