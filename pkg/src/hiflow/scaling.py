"""Model-scaling toolkit: fan-based init, rescaling baselines, warmup, probes.

Kaiming/Xavier weight magnitudes shrink as fan_in grows (fan_in = c_in *
k^2), so a dense 3x3 conv at full width starts much smaller than the
bottleneck's reduced middle conv - the initialization mechanism behind
swapping heavy convs for lightweight ones.  The rescaling baselines
(zeroed LayerNorm, residual/weight rescale, truncated normal) are
implemented as initialization transforms; they run and change statistics
as described, nothing more is claimed for them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError
from .layer import TIFMLayer
from .params import ParamBundle
from .tensor import F64, Tensor

INIT_KINDS = ("kaiming_fan", "xavier_fan", "zero_layernorm",
              "residual_rescale", "weight_rescale", "trunc_normal")


def fan(c_in: int, c_out: int, k: int) -> tuple[int, int]:
    """fan_in = c_in * k^2 and fan_out = c_out * k^2 of a k x k conv."""
    if c_in < 1 or c_out < 1 or k < 1:
        raise ConfigurationError("fan arguments must be positive")
    return c_in * k * k, c_out * k * k


@dataclass(frozen=True)
class InitScheme:
    """One of the studied weight initialization / rescaling recipes.

    ``factor`` defaults to 0.01 for residual_rescale and 0.1 for
    weight_rescale.  ``std``/``lo``/``hi`` configure trunc_normal; the
    rescale and zero-LayerNorm schemes start from the Kaiming base.
    """

    kind: str = "kaiming_fan"
    seed: int = 0
    factor: float | None = None
    std: float = 0.02
    lo: float = -0.04
    hi: float = 0.04

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigurationError(f"init kind must be one of {INIT_KINDS}")
        if self.factor is not None and self.factor <= 0:
            raise ConfigurationError("rescale factor must be positive")
        if self.kind == "trunc_normal" and not self.lo < self.hi:
            raise ConfigurationError(f"trunc_normal bounds need lo < hi, got {self.lo}, {self.hi}")

    @property
    def rescale_factor(self) -> float:
        if self.factor is not None:
            return self.factor
        return 0.01 if self.kind == "residual_rescale" else 0.1


def _trunc_normal(rng: np.random.Generator, std: float, lo: float, hi: float,
                  shape) -> np.ndarray:
    out = rng.normal(0.0, std, shape)
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = rng.normal(0.0, std, int(bad.sum()))
        bad = (out < lo) | (out > hi)
    return out


def truncated_normal_std(std: float, lo: float, hi: float) -> float:
    """Analytic standard deviation of a truncated normal draw."""
    a, b = lo / std, hi / std
    phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    cdf = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    z = cdf(b) - cdf(a)
    mean = (phi(a) - phi(b)) / z
    var = 1.0 + (a * phi(a) - b * phi(b)) / z - mean * mean
    return std * math.sqrt(var)


def target_std(scheme: InitScheme, param: Tensor) -> float:
    """Expected sample std of a weight tensor under ``scheme``."""
    kind = getattr(param, "init_kind", None)
    if kind not in ("linear", "conv"):
        raise ContractError(f"target_std applies to weights, got {kind!r}")
    f_in, f_out = param.fan
    if scheme.kind == "xavier_fan":
        return math.sqrt(2.0 / (f_in + f_out))
    if scheme.kind == "trunc_normal":
        return truncated_normal_std(scheme.std, scheme.lo, scheme.hi)
    return math.sqrt(2.0 / f_in)


def apply_init(model: ParamBundle, scheme: InitScheme) -> ParamBundle:
    """Re-draw every parameter of ``model`` in place under ``scheme``.

    Deterministic: the same seed yields bitwise-identical parameters.
    Biases are zeroed; LayerNorm affine restarts at (1, 0), or (0, 0) for
    the zero-LayerNorm scheme.  The rescale schemes first run the Kaiming
    base, then scale residual branches (as constants) or branch weights.
    """
    rng = np.random.default_rng(scheme.seed)
    branch_weights = set()
    if scheme.kind == "weight_rescale":
        for name, bundle in model.named_bundles():
            if isinstance(bundle, TIFMLayer):
                branch_weights.update(id(p) for _, p in bundle.named_params())

    for name, p in model.named_params():
        kind = getattr(p, "init_kind", None)
        if kind in ("linear", "conv"):
            f_in, f_out = p.fan
            if scheme.kind == "xavier_fan":
                draw = rng.normal(0.0, math.sqrt(2.0 / (f_in + f_out)), p.shape)
            elif scheme.kind == "trunc_normal":
                draw = _trunc_normal(rng, scheme.std, scheme.lo, scheme.hi, p.shape)
            else:
                draw = rng.normal(0.0, math.sqrt(2.0 / f_in), p.shape)
            if scheme.kind == "weight_rescale" and id(p) in branch_weights:
                draw = draw * scheme.rescale_factor
            p.data = np.ascontiguousarray(draw, dtype=p.data.dtype)
        elif kind == "bias":
            p.data = np.zeros_like(p.data)
        elif kind == "ln_gamma":
            fill = 0.0 if scheme.kind == "zero_layernorm" else 1.0
            p.data = np.full_like(p.data, fill)
        elif kind == "ln_beta":
            p.data = np.zeros_like(p.data)

    for name, bundle in model.named_bundles():
        if isinstance(bundle, TIFMLayer):
            scale = scheme.rescale_factor if scheme.kind == "residual_rescale" else 1.0
            bundle.att_scale = scale
            bundle.ffn_scale = scale
    return model


@dataclass(frozen=True)
class WarmupSchedule:
    """Linear warmup to ``base_lr`` then piecewise-constant milestone decay.

    ``lr(0) = base_lr / warmup_iters`` and ``lr(warmup_iters) = base_lr``,
    linear in between (so the midpoint sits at base_lr / 2).  Milestones
    are (iteration, multiplier) pairs with nonincreasing multipliers.
    """

    base_lr: float
    warmup_iters: int
    milestones: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.base_lr <= 0 or self.warmup_iters < 1:
            raise ConfigurationError("base_lr must be positive and warmup_iters >= 1")
        prev_iter, prev_mult = self.warmup_iters, 1.0
        for it, mult in self.milestones:
            if it <= prev_iter:
                raise ConfigurationError("milestone iterations must increase past warmup")
            if mult > prev_mult or mult <= 0:
                raise ConfigurationError("milestone multipliers must be nonincreasing and positive")
            prev_iter, prev_mult = it, mult


def default_milestones(total_iters: int) -> tuple[tuple[int, float], ...]:
    """Halve at 50%, 75% and 90% of the run."""
    return ((total_iters // 2, 0.5), (3 * total_iters // 4, 0.25),
            (9 * total_iters // 10, 0.125))


def lr_at(schedule: WarmupSchedule, iteration: int) -> float:
    """Learning rate at an iteration; continuous at the warmup boundary."""
    if iteration < 0:
        raise ContractError(f"iteration must be >= 0, got {iteration}")
    if iteration <= schedule.warmup_iters:
        return schedule.base_lr * max(iteration, 1) / schedule.warmup_iters
    mult = 1.0
    for it, m in schedule.milestones:
        if iteration >= it:
            mult = m
    return schedule.base_lr * mult


@dataclass(frozen=True)
class GradStat:
    layer_name: str
    param_name: str
    grad_max: float
    grad_mean: float
    grad_l2: float


def grad_magnitude_probe(model: ParamBundle, x: Tensor) -> list[GradStat]:
    """Per-parameter gradient magnitudes of 0.5*sum(out^2) w.r.t. the params.

    Runs in float64 for reproducible magnitude comparisons; the input must
    already be float64 and the model built at that precision.
    """
    if x.data.dtype != F64:
        raise ContractError("gradient probe requires a float64 input")
    for _, p in model.named_params():
        p.zero_grad()
    out = model.forward(x) if hasattr(model, "forward") else model(x)
    loss = (out * out).sum() * 0.5
    loss.backward()
    rows = []
    for name, p in model.named_params():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        layer, _, param = name.rpartition(".")
        rows.append(GradStat(layer, param, float(np.max(np.abs(g))),
                             float(np.mean(np.abs(g))), float(np.linalg.norm(g))))
    return rows
