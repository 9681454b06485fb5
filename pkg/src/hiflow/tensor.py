"""Minimal dense tensor with reverse-mode differentiation on numpy arrays.

Layout convention is channels-last everywhere: images and feature maps are
``(B, H, W, C)`` and the channel axis is always the last one.  Tensors are
float32 by default; float64 exists for gradient checking and the attention
gradient study.  All operations are pure: they allocate fresh output arrays
and never mutate their inputs (the optimizer mutates ``.data`` in place, by
explicit contract).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericsError

F32 = np.float32
F64 = np.float64
_DTYPES = {"f32": F32, "f64": F64, F32: F32, F64: F64,
           np.dtype(F32): F32, np.dtype(F64): F64}

_grad_enabled = True
_debug_checks = False


def set_debug(enabled: bool) -> None:
    """Globally enable NaN/Inf checking after every forward op."""
    global _debug_checks
    _debug_checks = bool(enabled)


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Context manager form of :func:`set_debug`."""
    global _debug_checks
    prev = _debug_checks
    _debug_checks = bool(enabled)
    try:
        yield
    finally:
        _debug_checks = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference/eval mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class MacCounter:
    """Tally of multiply-accumulate operations executed while active."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


_mac_counters: list[MacCounter] = []


@contextlib.contextmanager
def count_macs():
    """Count matmul/conv MACs executed inside the block.

    Yields a :class:`MacCounter`; read ``counter.total`` after the block.
    Counters nest: inner blocks also feed enclosing ones.
    """
    counter = MacCounter()
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def _record_macs(n: int) -> None:
    for c in _mac_counters:
        c.add(n)


def _as_dtype(dtype) -> np.dtype:
    try:
        return _DTYPES[dtype]
    except (KeyError, TypeError):
        raise ContractError(f"unsupported dtype {dtype!r}; use 'f32' or 'f64'")


def _check_finite(op: str, data: np.ndarray) -> None:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericsError(f"{op} produced non-finite values")


class Tensor:
    """Dense multi-dimensional array with an optional gradient buffer.

    Up to 6 axes, contiguous row-major float32/float64 data.  Set
    ``requires_grad=True`` on leaves that need gradients; call
    :meth:`backward` on a scalar result to fill ``.grad`` buffers.
    """

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (F32, F64) else F32
        arr = np.ascontiguousarray(data, dtype=_as_dtype(dtype))
        if arr.ndim > 6:
            raise DimensionError(f"rank {arr.ndim} exceeds the 6-axis limit")
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autograd plumbing ---------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor.

        ``seed`` is the gradient of the final objective w.r.t. this tensor;
        it defaults to 1 and then requires this tensor to be scalar.
        """
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")
        if seed is None:
            if self.size != 1:
                raise ContractError("backward() without a seed needs a scalar tensor")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.shape:
                raise DimensionError(f"seed shape {seed.shape} != tensor shape {self.shape}")

        # Iterative topological order; graphs from deep stacks overflow the
        # recursion limit otherwise.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self._accumulate(seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add,
                       lambda a, b, g: g, lambda a, b, g: g, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract,
                       lambda a, b, g: g, lambda a, b, g: -g, "sub")

    def __rsub__(self, other):
        return _binary(_coerce(other, self), self, np.subtract,
                       lambda a, b, g: g, lambda a, b, g: -g, "sub")

    def __mul__(self, other):
        return _binary(self, other, np.multiply,
                       lambda a, b, g: g * b, lambda a, b, g: g * a, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide,
                       lambda a, b, g: g / b,
                       lambda a, b, g: -g * a / (b * b), "div")

    def __rtruediv__(self, other):
        return _binary(_coerce(other, self), self, np.divide,
                       lambda a, b, g: g / b,
                       lambda a, b, g: -g * a / (b * b), "div")

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.shape
        out = _make(np.reshape(self.data, shape), (self,), "reshape")
        if out.requires_grad:
            out._backward = lambda: self._accumulate(out.grad.reshape(src_shape))
        return out

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        out = _make(np.ascontiguousarray(np.transpose(self.data, axes)), (self,), "transpose")
        if out.requires_grad:
            out._backward = lambda: self._accumulate(
                np.ascontiguousarray(np.transpose(out.grad, inv)))
        return out

    def __getitem__(self, idx) -> "Tensor":
        src_shape = self.shape
        out = _make(np.ascontiguousarray(self.data[idx]), (self,), "slice")
        if out.requires_grad:
            def _bw():
                g = np.zeros(src_shape, dtype=out.grad.dtype)
                g[idx] += out.grad
                self._accumulate(g)
            out._backward = _bw
        return out

    # -- reductions and elementwise ------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        src_shape = self.shape
        out = _make(np.sum(self.data, axis=axis, keepdims=keepdims), (self,), "sum")
        if out.requires_grad:
            def _bw():
                g = out.grad
                if not keepdims and axis is not None:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, src_shape).copy())
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else _axis_count(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def abs(self) -> "Tensor":
        out = _make(np.abs(self.data), (self,), "abs")
        if out.requires_grad:
            out._backward = lambda: self._accumulate(np.sign(self.data) * out.grad)
        return out

    def sqrt(self) -> "Tensor":
        out = _make(np.sqrt(self.data), (self,), "sqrt")
        if out.requires_grad:
            out._backward = lambda: self._accumulate(out.grad / (2.0 * out.data))
        return out


def _axis_count(shape, axis) -> int:
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for a in axis:
        n *= shape[a]
    return n


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str) -> Tensor:
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._backward = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    else:
        out.requires_grad = False
        out._parents = ()
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (have, want) in enumerate(zip(g.shape, shape)):
        if have != want:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, da, db, op: str) -> Tensor:
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if a_t and b_t and a.data.dtype != b.data.dtype:
        raise ContractError(f"{op}: mixed dtypes {a.data.dtype} and {b.data.dtype}")
    at = a if a_t else _coerce(a, b)
    bt = b if b_t else _coerce(b, a)
    out = _make(fwd(at.data, bt.data), (at, bt), op)
    if out.requires_grad:
        def _bw():
            g = out.grad
            if at.requires_grad:
                at._accumulate(_unbroadcast(da(at.data, bt.data, g), at.shape))
            if bt.requires_grad:
                bt._accumulate(_unbroadcast(db(at.data, bt.data, g), bt.shape))
        out._backward = _bw
    return out


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``(..., m, k) @ (..., k, n) -> (..., m, n)``.

    Leading batch axes broadcast numpy-style.  Counts ``batch * m * k * n``
    MACs when a :func:`count_macs` block is active.
    """
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise ContractError("matmul expects two Tensors")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"matmul: mixed dtypes {a.data.dtype} and {b.data.dtype}")
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch axes incompatible: {a.shape} @ {b.shape}")
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    _record_macs(math.prod(batch) * m * k * n)

    out = _make(np.matmul(a.data, b.data), (a, b), "matmul")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))
        out._backward = _bw
    return out


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty last axis")
    z = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=-1, keepdims=True)
    out = _make(y, (x,), "softmax")
    if out.requires_grad:
        def _bw():
            g = out.grad
            dot = np.sum(g * y, axis=-1, keepdims=True)
            x._accumulate(y * (g - dot))
        out._backward = _bw
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each position over the channel (last) axis, then affine.

    ``gamma`` and ``beta`` have shape ``(C,)``.  Variance is the population
    variance over channels; ``eps`` guards the zero-variance case.
    """
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    c = x.shape[-1] if x.ndim else 0
    if c == 0:
        raise DimensionError("layer_norm over an empty channel axis")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = xc * inv
    out = _make(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if beta.requires_grad:
                beta._accumulate(g.reshape(-1, c).sum(axis=0))
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).reshape(-1, c).sum(axis=0))
            if x.requires_grad:
                gh = g * gamma.data
                m1 = np.mean(gh, axis=-1, keepdims=True)
                m2 = np.mean(gh * xhat, axis=-1, keepdims=True)
                x._accumulate(inv * (gh - m1 - xhat * m2))
        out._backward = _bw
    return out


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU applied elementwise."""
    c = math.sqrt(2.0 / math.pi)
    xd = x.data
    inner = c * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = _make(0.5 * xd * (1.0 + t), (x,), "gelu")
    if out.requires_grad:
        def _bw():
            d_inner = c * (1.0 + 3 * 0.044715 * xd ** 2)
            grad = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * d_inner
            x._accumulate(out.grad * grad)
        out._backward = _bw
    return out


# -- convolution ---------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, groups: int = 1) -> Tensor:
    """Same-padded 2-D cross-correlation on channels-last images.

    ``x`` is ``(B, H, W, Cin)`` and ``w`` is ``(kh, kw, Cin/groups, Cout)``
    with odd ``kh, kw``.  ``groups == Cin`` with a ``(kh, kw, 1, Cin)``
    kernel is a depthwise convolution.  Zero padding keeps H and W fixed.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D x and w, got {x.shape} and {w.shape}")
    if x.data.dtype != w.data.dtype:
        raise ContractError("conv2d: mixed dtypes")
    kh, kw, wc_in, c_out = w.shape
    b_, h, w_, c_in = x.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    from .errors import ConfigurationError
    if c_in % groups != 0 or c_out % groups != 0:
        raise ConfigurationError(
            f"groups={groups} must divide Cin={c_in} and Cout={c_out}")
    if wc_in != c_in // groups:
        raise DimensionError(
            f"kernel input channels {wc_in} != Cin/groups = {c_in // groups}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"bias shape {bias.shape} != ({c_out},)")

    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cg_in, cg_out = c_in // groups, c_out // groups
    # Per-tap matmul over channels; kernels here are 1x1 or 3x3, so the tap
    # loop stays short and the inner contraction is a single einsum.
    wg = w.data.reshape(kh, kw, cg_in, groups, cg_out)
    acc = np.zeros((b_, h, w_, groups, cg_out), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            tap = xp[:, i:i + h, j:j + w_, :].reshape(b_, h, w_, groups, cg_in)
            acc += np.einsum("bhwgi,igo->bhwgo", tap, wg[i, j], optimize=True)
    y = acc.reshape(b_, h, w_, c_out)
    _record_macs(b_ * h * w_ * kh * kw * cg_in * c_out)
    if bias is not None:
        y = y + bias.data

    parents = (x, w) if bias is None else (x, w, bias)
    out = _make(y, parents, "conv2d")
    if out.requires_grad:
        def _bw():
            g = out.grad.reshape(b_, h, w_, groups, cg_out)
            if bias is not None and bias.requires_grad:
                bias._accumulate(out.grad.reshape(-1, c_out).sum(axis=0))
            if w.requires_grad:
                gw = np.empty_like(wg)
                for i in range(kh):
                    for j in range(kw):
                        tap = xp[:, i:i + h, j:j + w_, :].reshape(b_, h, w_, groups, cg_in)
                        gw[i, j] = np.einsum("bhwgi,bhwgo->igo", tap, g, optimize=True)
                w._accumulate(gw.reshape(kh, kw, cg_in, c_out))
            if x.requires_grad:
                gxp = np.zeros_like(xp).reshape(b_, h + 2 * ph, w_ + 2 * pw, groups, cg_in)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + h, j:j + w_] += np.einsum(
                            "bhwgo,igo->bhwgi", g, wg[i, j], optimize=True)
                gxp = gxp.reshape(b_, h + 2 * ph, w_ + 2 * pw, c_in)
                x._accumulate(np.ascontiguousarray(
                    gxp[:, ph:ph + h, pw:pw + w_, :]))
        out._backward = _bw
    return out


# -- spatial rearrangements ----------------------------------------------------


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: ``(B, H, W, r^2*C) -> (B, rH, rW, C)``."""
    if r < 1:
        raise DimensionError(f"pixel_shuffle factor must be >= 1, got {r}")
    b, h, w, c = x.shape
    if c % (r * r) != 0:
        raise DimensionError(f"channels {c} not divisible by r^2 = {r * r}")
    if r == 1:
        return x.reshape(b, h, w, c)
    cc = c // (r * r)
    y = x.reshape(b, h, w, r, r, cc)
    y = y.transpose(0, 1, 3, 2, 4, 5)       # (B, H, r, W, r, C)
    return y.reshape(b, h * r, w * r, cc)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth inverse of :func:`pixel_shuffle`."""
    if r < 1:
        raise DimensionError(f"pixel_unshuffle factor must be >= 1, got {r}")
    b, h, w, c = x.shape
    if h % r != 0 or w % r != 0:
        raise DimensionError(f"extents ({h},{w}) not divisible by r={r}")
    if r == 1:
        return x.reshape(b, h, w, c)
    y = x.reshape(b, h // r, r, w // r, r, c)
    y = y.transpose(0, 1, 3, 2, 4, 5)        # (B, H/r, W/r, r, r, C)
    return y.reshape(b, h // r, w // r, r * r * c)


def _reflect_indices(n: int, lo: int, hi: int) -> np.ndarray:
    if n == 1:
        return np.zeros(lo + 1 + hi, dtype=np.intp)
    if lo >= n or hi >= n:
        raise DimensionError(f"reflect padding ({lo},{hi}) too wide for extent {n}")
    idx = np.arange(-lo, n + hi)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx).astype(np.intp)


def pad2d(x: Tensor, pads: tuple[int, int, int, int], mode: str = "constant") -> Tensor:
    """Pad the H and W axes of a ``(B, H, W, C)`` tensor.

    ``pads`` is ``(top, bottom, left, right)``; ``mode`` is ``"constant"``
    (zeros) or ``"reflect"`` (no edge repeat).
    """
    if x.ndim != 4:
        raise DimensionError(f"pad2d expects a 4-D tensor, got {x.shape}")
    t, b, l, r = pads
    if min(pads) < 0:
        raise DimensionError(f"negative padding {pads}")
    _, h, w, _ = x.shape
    if mode == "constant":
        out = _make(np.pad(x.data, ((0, 0), (t, b), (l, r), (0, 0))), (x,), "pad2d")
        if out.requires_grad:
            out._backward = lambda: x._accumulate(
                np.ascontiguousarray(out.grad[:, t:t + h, l:l + w, :]))
        return out
    if mode == "reflect":
        ih = _reflect_indices(h, t, b)
        iw = _reflect_indices(w, l, r)
        out = _make(np.ascontiguousarray(x.data[:, ih][:, :, iw]), (x,), "pad2d")
        if out.requires_grad:
            def _bw():
                g_rows = np.zeros((x.shape[0], h, len(iw), x.shape[3]), dtype=out.grad.dtype)
                np.add.at(g_rows, (slice(None), ih), out.grad)
                g = np.zeros_like(x.data)
                np.add.at(g, (slice(None), slice(None), iw), g_rows)
                x._accumulate(g)
            out._backward = _bw
        return out
    raise ContractError(f"unknown pad mode {mode!r}")


def roll2d(x: Tensor, dy: int, dx: int) -> Tensor:
    """Cyclically shift the H and W axes of a ``(B, H, W, C)`` tensor."""
    if x.ndim != 4:
        raise DimensionError(f"roll2d expects a 4-D tensor, got {x.shape}")
    out = _make(np.roll(x.data, (dy, dx), axis=(1, 2)), (x,), "roll2d")
    if out.requires_grad:
        out._backward = lambda: x._accumulate(
            np.roll(out.grad, (-dy, -dx), axis=(1, 2)))
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate tensors along ``axis``."""
    tensors = tuple(tensors)
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    if len({t.data.dtype for t in tensors}) > 1:
        raise ContractError("concat: mixed dtypes")
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    if out.requires_grad:
        def _bw():
            start = 0
            for t in tensors:
                n = t.shape[axis]
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(start, start + n)
                if t.requires_grad:
                    t._accumulate(np.ascontiguousarray(out.grad[tuple(sl)]))
                start += n
        out._backward = _bw
    return out


# -- gradient checking -----------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map ``x`` to a scalar tensor and ``x`` must be float64.  The
    relative error of coordinate ``i`` is ``|a_i - n_i| / max(|a_i|, |n_i|, 1)``
    so that tiny gradients are judged on absolute error.
    """
    if x.data.dtype != F64:
        raise ContractError("grad_check requires a float64 input tensor")
    if not (1e-7 <= h <= 1e-4):
        raise ContractError(f"step h={h} outside [1e-7, 1e-4]")

    leaf = Tensor(x.data.copy(), requires_grad=True)
    y = f(leaf)
    if not isinstance(y, Tensor) or y.size != 1:
        raise ContractError("grad_check objective must return a scalar tensor")
    y.backward()
    analytic = leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data)

    base = x.data.copy()
    numeric = np.zeros_like(base)
    flat_b = base.reshape(-1)
    flat_n = numeric.reshape(-1)
    probe = Tensor(base.copy())
    flat_p = probe.data.reshape(-1)
    with no_grad():
        for i in range(flat_b.size):
            orig = flat_b[i]
            flat_p[i] = orig + h
            up = f(probe).item()
            flat_p[i] = orig - h
            down = f(probe).item()
            flat_p[i] = orig
            flat_n[i] = (up - down) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))
