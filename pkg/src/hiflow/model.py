"""Whole-model assemblies: columnar stack for SR, U-shape for denoising.

The columnar model is a 3x3 feature extractor, N residual stages of
transformer layers each closed by a spatial conv block, a deep-feature conv
block under a global residual, and a pixel-shuffle reconstruction head.
The U-shape halves resolution (and doubles channels) three times via
pixel-unshuffle, runs a latent stage, then mirrors back up with skip
concatenation, ending in a 3x3 head under a global residual to the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .attention import WindowGeom
from .errors import ConfigurationError, GeometryError
from .layer import TIFMLayer, build_variant, hiir_layer, zero_branches
from .params import ConvParams, ParamBundle
from .tensor import Tensor, concat, count_macs, pixel_shuffle, pixel_unshuffle

TASKS = ("sr", "denoise")
CONV_KINDS = ("conv1", "linear", "conv3")


@dataclass
class HiIRConfig:
    """Full hyperparameter record for one model."""

    task: str = "sr"
    scale: int = 2
    channels: int = 16
    heads: int = 2
    ffn_ratio: int = 2
    p: int = 4
    s: int = 2
    shift: bool = False
    variant: str = "v3"
    stages: int = 1
    layers_per_stage: int = 2
    conv_kind: str = "conv3"
    score_kind: str = "dot"
    init_scheme: str = "trunc_normal"
    tau: float = 0.1
    in_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "sr" and self.scale not in (2, 3, 4):
            raise ConfigurationError(f"SR scale must be 2, 3 or 4, got {self.scale}")
        if self.task == "denoise" and self.scale != 1:
            raise ConfigurationError("denoising requires scale 1")
        if self.conv_kind not in CONV_KINDS:
            raise ConfigurationError(f"conv_kind must be one of {CONV_KINDS}")
        if self.channels % self.heads:
            raise ConfigurationError(
                f"channels {self.channels} not divisible by heads {self.heads}")
        if self.variant in ("v3", "v4") and self.channels % (2 * self.heads):
            raise ConfigurationError(
                f"variant {self.variant} needs channels divisible by 2*heads")
        if self.conv_kind == "conv3" and self.channels % 4:
            raise ConfigurationError("conv3 blocks need channels divisible by 4")
        if self.in_channels not in (1, 3):
            raise ConfigurationError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.stages < 1 or self.layers_per_stage < 1:
            raise ConfigurationError("stages and layers_per_stage must be >= 1")


_BOOL_WORDS = {"true": True, "yes": True, "1": True,
               "false": False, "no": False, "0": False}


def parse_config(text: str) -> HiIRConfig:
    """Parse ``key = value`` lines ('#' comments) into a config.

    Unknown keys are errors, matching the file-format contract.
    """
    spec = {f.name: f.type for f in fields(HiIRConfig)}
    types = {f.name: type(getattr(HiIRConfig(), f.name)) for f in fields(HiIRConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in spec:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        ty = types[key]
        try:
            if ty is bool:
                values[key] = _BOOL_WORDS[val.lower()]
            elif ty is int:
                values[key] = int(val)
            elif ty is float:
                values[key] = float(val)
            else:
                values[key] = val
        except (KeyError, ValueError):
            raise ConfigurationError(f"line {lineno}: bad value {val!r} for {key!r}")
    return HiIRConfig(**values)


def format_config(cfg: HiIRConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


class ConvBlock(ParamBundle):
    """Per-stage spatial block: dense 3x3, 1x1, or a 1x1-3x3-1x1 bottleneck.

    Weight parameter counts are 9C^2, C^2 and (17/16)C^2 respectively; the
    bottleneck's middle conv runs at C/4 channels.
    """

    def __init__(self, rng: np.random.Generator, kind: str, c: int, dtype="f32"):
        if kind not in CONV_KINDS:
            raise ConfigurationError(f"conv kind must be one of {CONV_KINDS}")
        self.kind = kind
        if kind == "conv1":
            self.conv = ConvParams(rng, 3, 3, c, c, dtype)
        elif kind == "linear":
            self.conv = ConvParams(rng, 1, 1, c, c, dtype)
        else:
            if c % 4:
                raise ConfigurationError(f"conv3 needs channels divisible by 4, got {c}")
            self.reduce = ConvParams(rng, 1, 1, c, c // 4, dtype)
            self.spatial = ConvParams(rng, 3, 3, c // 4, c // 4, dtype)
            self.expand = ConvParams(rng, 1, 1, c // 4, c, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if self.kind == "conv3":
            return self.expand(self.spatial(self.reduce(x)))
        return self.conv(x)

    def weight_param_count(self) -> int:
        names = dict(self.named_params())
        return sum(p.size for n, p in names.items() if n.endswith(".w"))


def conv_block(kind: str, c: int, rng: np.random.Generator | None = None,
               dtype="f32") -> ConvBlock:
    """Build a spatial conv block of the given kind at width ``c``."""
    return ConvBlock(rng if rng is not None else np.random.default_rng(0), kind, c, dtype)


class Stage(ParamBundle):
    """A run of transformer layers closed by a conv block and a residual."""

    def __init__(self, rng, cfg: HiIRConfig, c: int, dtype="f32",
                 spatial_identity: bool = False):
        geom_proto = WindowGeom(cfg.p * cfg.s, cfg.p * cfg.s, cfg.p, cfg.s)
        self.layer = build_variant(
            cfg.variant, c, cfg.heads, cfg.ffn_ratio, geom_proto,
            cfg.layers_per_stage, rng, score_kind=cfg.score_kind, tau=cfg.tau,
            dtype=dtype, shift=cfg.shift, spatial_identity=spatial_identity)
        self.conv = ConvBlock(rng, cfg.conv_kind, c, dtype)

    def __call__(self, x: Tensor, geom: WindowGeom) -> Tensor:
        t = x
        for layer in self.layer:
            t = hiir_layer(t, layer, geom)
        return self.conv(t) + x


@dataclass
class ModelSummary:
    """Exact trainable-scalar counts, broken down by top-level component."""

    parameter_count: int
    breakdown: dict[str, int]
    reference_shape: tuple | None = None
    reference_macs: int | None = None


class _ModelBase(ParamBundle):
    def geometry(self, h: int, w: int) -> WindowGeom:
        return WindowGeom(h, w, self.cfg.p, self.cfg.s)

    def layers(self) -> list[TIFMLayer]:
        return [b for _, b in self.named_bundles() if isinstance(b, TIFMLayer)]

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


class ColumnarModel(_ModelBase):
    """Constant-resolution stack for super-resolution."""

    def __init__(self, cfg: HiIRConfig, dtype="f32", spatial_identity: bool = False):
        rng = np.random.default_rng(cfg.seed)
        c, r = cfg.channels, cfg.scale
        self.cfg = cfg
        self.extract = ConvParams(rng, 3, 3, cfg.in_channels, c, dtype)
        self.stage = [Stage(rng, cfg, c, dtype, spatial_identity)
                      for _ in range(cfg.stages)]
        self.deep = ConvBlock(rng, cfg.conv_kind, c, dtype)
        self.head = ConvParams(rng, 3, 3, c, r * r * cfg.in_channels, dtype)

    @property
    def spatial_multiple(self) -> int:
        block = self.cfg.p * self.cfg.s
        return 2 * block if self.cfg.variant == "v4" else block

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, _ = x.shape
        m = self.spatial_multiple
        if h % m or w % m:
            raise GeometryError(f"input extents ({h},{w}) must be multiples of {m}")
        geom = self.geometry(h, w)
        f = self.extract(x)
        t = f
        for stage in self.stage:
            t = stage(t, geom)
        t = self.deep(t) + f
        return pixel_shuffle(self.head(t), self.cfg.scale)


class UShapeModel(_ModelBase):
    """Three-level encoder/decoder with skip fusion for denoising.

    Stages 0-2 encode at widths C, 2C, 4C; stage 3 is the 8C latent;
    stages 4-6 decode back at 4C, 2C, C.  Resampling is a 1x1 channel-fuse
    conv around pixel-unshuffle/shuffle, and skips fuse by concatenation
    plus a 1x1 conv.
    """

    LEVELS = 3

    def __init__(self, cfg: HiIRConfig, dtype="f32", spatial_identity: bool = False):
        if cfg.channels % 2:
            raise ConfigurationError("U-shape needs even base channels")
        rng = np.random.default_rng(cfg.seed)
        c = cfg.channels
        self.cfg = cfg
        self.extract = ConvParams(rng, 3, 3, cfg.in_channels, c, dtype)
        widths = [c * (1 << i) for i in range(self.LEVELS + 1)]     # C, 2C, 4C, 8C
        enc = [Stage(rng, cfg, widths[i], dtype, spatial_identity)
               for i in range(self.LEVELS)]
        latent = Stage(rng, cfg, widths[-1], dtype, spatial_identity)
        dec = [Stage(rng, cfg, widths[i], dtype, spatial_identity)
               for i in reversed(range(self.LEVELS))]
        self.stage = enc + [latent] + dec
        self.down = [ConvParams(rng, 1, 1, widths[i], widths[i] // 2, dtype)
                     for i in range(self.LEVELS)]
        self.up = [ConvParams(rng, 1, 1, widths[i + 1], 2 * widths[i + 1], dtype)
                   for i in reversed(range(self.LEVELS))]
        self.fuse = [ConvParams(rng, 1, 1, 2 * widths[i], widths[i], dtype)
                     for i in reversed(range(self.LEVELS))]
        self.head = ConvParams(rng, 3, 3, c, cfg.in_channels, dtype)

    @property
    def spatial_multiple(self) -> int:
        block = self.cfg.p * self.cfg.s
        if self.cfg.variant == "v4":
            block *= 2
        return block << self.LEVELS

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, _ = x.shape
        m = self.spatial_multiple
        if h % m or w % m:
            raise GeometryError(f"input extents ({h},{w}) must be multiples of {m}")
        t = self.extract(x)
        skips = []
        for lvl in range(self.LEVELS):
            t = self.stage[lvl](t, self.geometry(t.shape[1], t.shape[2]))
            skips.append(t)
            t = pixel_unshuffle(self.down[lvl](t), 2)
        t = self.stage[self.LEVELS](t, self.geometry(t.shape[1], t.shape[2]))
        for i, lvl in enumerate(reversed(range(self.LEVELS))):
            t = pixel_shuffle(self.up[i](t), 2)
            t = self.fuse[i](concat([t, skips[lvl]], axis=-1))
            t = self.stage[self.LEVELS + 1 + i](t, self.geometry(t.shape[1], t.shape[2]))
        return x + self.head(t)


def build_columnar(cfg: HiIRConfig, dtype="f32", **kw) -> ColumnarModel:
    if cfg.task != "sr":
        raise ConfigurationError(f"columnar architecture is for SR, got task {cfg.task!r}")
    return ColumnarModel(cfg, dtype, **kw)


def build_ushape(cfg: HiIRConfig, dtype="f32", **kw) -> UShapeModel:
    if cfg.task != "denoise":
        raise ConfigurationError(f"U-shape architecture is for denoising, got {cfg.task!r}")
    return UShapeModel(cfg, dtype, **kw)


def build_model(cfg: HiIRConfig, dtype="f32", **kw):
    return build_columnar(cfg, dtype, **kw) if cfg.task == "sr" else build_ushape(cfg, dtype, **kw)


def make_identity(model: _ModelBase):
    """Zero every residual branch and the head so forward(x) == x (U-shape)
    or the exact head-only function (columnar)."""
    for layer in model.layers():
        zero_branches(layer)
    model.head.w.data[...] = 0.0
    model.head.b.data[...] = 0.0
    return model


def param_count(model: ParamBundle, reference_shape: tuple | None = None) -> ModelSummary:
    """Count trainable scalars, grouped by top-level component.

    With ``reference_shape`` (B, H, W, C), also tallies the exact forward
    MAC count on a deterministic random input of that shape.
    """
    breakdown: dict[str, int] = {}
    total = 0
    for name, p in model.named_params():
        top = name.split(".", 1)[0]
        breakdown[top] = breakdown.get(top, 0) + p.size
        total += p.size
    macs = None
    if reference_shape is not None:
        from .tensor import no_grad
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal(reference_shape), dtype="f32")
        with no_grad(), count_macs() as counter:
            model.forward(x)
        macs = counter.total
    return ModelSummary(total, breakdown, reference_shape, macs)
