"""Parameter bundles: named trees of trainable tensors.

Bundles are plain objects whose attributes are Tensors, other bundles, or
lists of bundles.  ``named_params`` flattens the tree into dotted names;
list entries contribute their index without a dot, so a model with a
``stage`` list of bundles each holding a ``layer`` list yields names like
``stage0.layer1.norm1.gamma``.

Weight factories stamp each tensor with ``init_kind`` ('linear', 'conv',
'ln_gamma', 'ln_beta', 'bias') and ``fan = (fan_in, fan_out)`` so the
initialization schemes can re-draw them without knowing the architecture.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamBundle:
    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, ParamBundle):
                yield from value.named_params(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, ParamBundle):
                        yield from item.named_params(f"{name}{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{name}{i}", item

    def named_bundles(self, prefix: str = "") -> Iterator[tuple[str, "ParamBundle"]]:
        yield prefix.rstrip("."), self
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, ParamBundle):
                yield from value.named_bundles(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, ParamBundle):
                        yield from item.named_bundles(f"{name}{i}.")

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def state_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, p in self.named_params():
            yield name, p.data

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        from .errors import FormatError
        own = dict(self.named_params())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise FormatError(
                f"checkpoint mismatch; missing={missing[:4]} extra={extra[:4]}")
        for name, p in own.items():
            arr = state[name]
            if tuple(arr.shape) != p.shape:
                raise FormatError(
                    f"checkpoint entry {name!r} has shape {arr.shape}, expected {p.shape}")
            p.data = np.ascontiguousarray(arr.astype(p.data.dtype, copy=False))


def kaiming_std(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


def linear_weight(rng: np.random.Generator, c_in: int, c_out: int, dtype) -> Tensor:
    """Dense (c_in, c_out) projection weight, Kaiming fan-in normal init."""
    w = Tensor(rng.normal(0.0, kaiming_std(c_in), (c_in, c_out)),
               dtype=dtype, requires_grad=True)
    w.init_kind = "linear"
    w.fan = (c_in, c_out)
    return w


def conv_weight(rng: np.random.Generator, kh: int, kw: int, c_in: int, c_out: int,
                dtype, groups: int = 1) -> Tensor:
    """(kh, kw, c_in/groups, c_out) kernel, Kaiming fan-in normal init."""
    cg_in = c_in // groups
    fan_in = cg_in * kh * kw
    fan_out = (c_out // groups) * kh * kw
    w = Tensor(rng.normal(0.0, kaiming_std(fan_in), (kh, kw, cg_in, c_out)),
               dtype=dtype, requires_grad=True)
    w.init_kind = "conv"
    w.fan = (fan_in, fan_out)
    return w


def bias(c: int, dtype) -> Tensor:
    b = Tensor(np.zeros(c), dtype=dtype, requires_grad=True)
    b.init_kind = "bias"
    return b


class LayerNormParams(ParamBundle):
    def __init__(self, c: int, dtype):
        self.gamma = Tensor(np.ones(c), dtype=dtype, requires_grad=True)
        self.gamma.init_kind = "ln_gamma"
        self.beta = Tensor(np.zeros(c), dtype=dtype, requires_grad=True)
        self.beta.init_kind = "ln_beta"


class ConvParams(ParamBundle):
    """A single convolution: weight plus optional bias."""

    def __init__(self, rng, kh, kw, c_in, c_out, dtype, groups: int = 1,
                 with_bias: bool = True):
        self.groups = groups
        self.w = conv_weight(rng, kh, kw, c_in, c_out, dtype, groups)
        self.b = bias(c_out, dtype) if with_bias else None

    def __call__(self, x):
        from .tensor import conv2d
        return conv2d(x, self.w, self.b, groups=self.groups)
