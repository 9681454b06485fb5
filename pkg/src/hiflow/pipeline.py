"""Data synthesis, degradation, metrics, and the toy training/inference loops.

Images are channels-last float arrays in [0, 1]; values are clamped at I/O
boundaries (file read/write and inference output), not inside the math.
Toy training overfits a fixed set of (degraded, clean) pairs - enough to
exercise every probe end to end while staying deterministic and fast.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigurationError, DimensionError, FormatError,
                     GeometryError, TrainingDivergedError)
from .model import HiIRConfig, build_model
from .scaling import InitScheme, WarmupSchedule, apply_init, lr_at
from .serialize import load_hift, save_hift
from .tensor import Tensor, no_grad

PSNR_CAP = 99.0


def worker_threads(requested: int | None = None) -> int:
    """Worker-thread budget, capped by the HIFLOW_THREADS environment var.

    Compute here is single-threaded; determinism is only guaranteed at 1.
    """
    cap = int(os.environ.get("HIFLOW_THREADS", "1") or "1")
    want = cap if requested is None else requested
    return max(1, min(want, cap))


# -- degradation -----------------------------------------------------------------


@dataclass(frozen=True)
class DegradationSpec:
    """How a clean image becomes the degraded network input."""

    kind: str                # "awgn" or "bicubic"
    sigma: float = 0.0       # noise std in 8-bit units (15/25/50 in the studies)
    scale: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("awgn", "bicubic"):
            raise ConfigurationError(f"degradation kind must be awgn|bicubic, got {self.kind!r}")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be >= 0")
        if self.scale not in (1, 2, 3, 4):
            raise ConfigurationError(f"scale must be in 1..4, got {self.scale}")


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    near = (a + 2.0) * ax ** 3 - (a + 3.0) * ax ** 2 + 1.0
    far = a * ax ** 3 - 5.0 * a * ax ** 2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _resize_axis_down(img: np.ndarray, r: int, axis: int) -> np.ndarray:
    """Anti-aliased cubic downsample of one axis by integer factor r."""
    n = img.shape[axis]
    m = n // r
    centers = (np.arange(m) + 0.5) * r - 0.5
    radius = 2 * r
    offsets = np.arange(-radius + 1, radius + 1)
    taps = np.floor(centers)[:, None] + offsets[None, :]
    weights = _cubic((taps - centers[:, None]) / r) / r
    weights /= weights.sum(axis=1, keepdims=True)
    taps = np.clip(taps, 0, n - 1).astype(np.intp)
    moved = np.moveaxis(img, axis, 0)
    out = np.einsum("mt,mt...->m...", weights, moved[taps], optimize=True)
    return np.moveaxis(out, 0, axis).astype(img.dtype)


def bicubic_downsample(img: np.ndarray, r: int) -> np.ndarray:
    """Downscale by integer r with the a=-0.5 cubic kernel, source-space
    anti-aliasing, and replicated edges."""
    if r == 1:
        return img.copy()
    h, w = img.shape[:2]
    if h % r or w % r:
        raise GeometryError(f"extents ({h},{w}) not divisible by scale {r}")
    return _resize_axis_down(_resize_axis_down(img, r, 0), r, 1)


def degrade(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply the degradation; a fixed seed makes this a pure function."""
    img = np.asarray(img, dtype=np.float32)
    if spec.kind == "awgn":
        if spec.sigma == 0:
            return img.copy()
        rng = np.random.default_rng(spec.seed)
        noise = rng.normal(0.0, spec.sigma / 255.0, img.shape)
        return (img + noise).astype(np.float32)
    return bicubic_downsample(img, spec.scale)


# -- metrics ---------------------------------------------------------------------


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] range, capped."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


# -- toy data --------------------------------------------------------------------


def _blur_axis(a: np.ndarray, axis: int) -> np.ndarray:
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    moved = np.moveaxis(a, axis, 0)
    padded = np.pad(moved, [(2, 2)] + [(0, 0)] * (moved.ndim - 1), mode="reflect")
    out = sum(k[i] * padded[i:i + moved.shape[0]] for i in range(5))
    return np.moveaxis(out, 0, axis)


def make_toy_images(n: int, h: int, w: int, channels: int = 3,
                    seed: int = 0) -> list[np.ndarray]:
    """Smooth random fields in [0, 1]; structured enough to overfit on."""
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(n):
        img = rng.random((h, w, channels))
        for _ in range(3):
            img = _blur_axis(_blur_axis(img, 0), 1)
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
        images.append(img.astype(np.float32))
    return images


def make_toy_dataset(cfg: HiIRConfig, n_images: int, size: int, sigma: float = 25.0,
                     seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """(degraded, clean) pairs for the config's task, fixed per pair."""
    clean = make_toy_images(n_images, size, size, cfg.in_channels, seed)
    pairs = []
    for i, hq in enumerate(clean):
        if cfg.task == "denoise":
            spec = DegradationSpec("awgn", sigma=sigma, seed=seed + 1000 + i)
        else:
            spec = DegradationSpec("bicubic", scale=cfg.scale, seed=seed + 1000 + i)
        pairs.append((degrade(hq, spec), hq))
    return pairs


# -- optimization ----------------------------------------------------------------


class AdamW:
    """Adaptive moments with decoupled weight decay (betas 0.9 / 0.99)."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.99),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64, copy=False)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.data.dtype)


def _stack_batch(pairs, idx, dtype="f32") -> tuple[Tensor, Tensor]:
    lq = np.stack([pairs[i][0] for i in idx])
    hq = np.stack([pairs[i][1] for i in idx])
    return Tensor(lq, dtype=dtype), Tensor(hq, dtype=dtype)


def evaluate_l1(model, dataset) -> float:
    """Mean absolute error of the model over the whole dataset."""
    total = 0.0
    with no_grad():
        for lq, hq in dataset:
            x, y = _stack_batch([(lq, hq)], [0])
            out = model.forward(x)
            total += float(np.mean(np.abs(out.data - y.data)))
    return total / len(dataset)


def _clip_grads(params, max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params
                          if p.grad is not None))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad *= scale


def train_toy(cfg: HiIRConfig, dataset, iters: int, schedule: WarmupSchedule,
              batch: int = 2, seed: int = 0, workers: int = 1,
              clip_norm: float | None = None):
    """Overfit the model on fixed (degraded, clean) pairs with an L1 loss.

    Returns ``(model, losses)`` where ``losses`` is the per-iteration
    minibatch L1.  A non-finite loss aborts immediately with the failing
    iteration.  Bit-reproducible for a given seed at worker count 1.
    """
    if not dataset:
        raise ConfigurationError("training dataset is empty")
    worker_threads(workers)
    model = build_model(cfg)
    apply_init(model, InitScheme(cfg.init_scheme, seed=cfg.seed))
    opt = AdamW(model.params())
    rng = np.random.default_rng(seed)
    batch = min(batch, len(dataset))
    losses: list[float] = []
    for it in range(iters):
        idx = rng.integers(0, len(dataset), size=batch)
        x, y = _stack_batch(dataset, idx)
        out = model.forward(x)
        loss = (out - y).abs().mean()
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(it)
        losses.append(value)
        opt.zero_grad()
        loss.backward()
        if clip_norm is not None:
            _clip_grads(opt.params, clip_norm)
        opt.step(lr_at(schedule, it))
    return model, losses


# -- inference -------------------------------------------------------------------


def _pad_reflect_to(img: np.ndarray, mult: int) -> np.ndarray:
    h, w = img.shape[:2]
    ph = (-h) % mult
    pw = (-w) % mult
    out = img
    while ph or pw:
        # np.pad 'reflect' caps the pad at extent-1 per call; iterate for
        # the rare case of tiny inputs against a large multiple.
        step_h = min(ph, max(out.shape[0] - 1, 1))
        step_w = min(pw, max(out.shape[1] - 1, 1))
        mode = "reflect" if min(out.shape[0], out.shape[1]) > 1 else "edge"
        out = np.pad(out, ((0, step_h), (0, step_w), (0, 0)), mode=mode)
        ph -= step_h
        pw -= step_w
    return out


def infer(model, img: np.ndarray) -> np.ndarray:
    """Full-image restoration with pad-and-crop; output clamped to [0, 1]."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != model.cfg.in_channels:
        raise DimensionError(
            f"expected (H,W,{model.cfg.in_channels}) image, got {img.shape}")
    h, w = img.shape[:2]
    padded = _pad_reflect_to(img, model.spatial_multiple)
    with no_grad():
        out = model.forward(Tensor(padded[None]))
    r = model.cfg.scale
    restored = out.data[0, :r * h, :r * w, :]
    return np.clip(restored, 0.0, 1.0).astype(np.float32)


# -- image files -----------------------------------------------------------------


def _read_pnm_tokens(f, count: int) -> list[bytes]:
    tokens: list[bytes] = []
    while len(tokens) < count:
        ch = f.read(1)
        if not ch:
            raise FormatError("truncated PNM header")
        if ch in b"#":
            while ch not in b"\n" and ch:
                ch = f.read(1)
            continue
        if ch.isspace():
            continue
        token = ch
        while True:
            ch = f.read(1)
            if not ch or ch.isspace():
                break
            if ch in b"#":
                while ch not in b"\n" and ch:
                    ch = f.read(1)
                break
            token += ch
        tokens.append(token)
    return tokens


def load_image(path) -> np.ndarray:
    """Read PPM (P6), PGM (P5) or HIFT into a float32 (H, W, C) in [0, 1]."""
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic == b"HI":
            pass  # fall through to HIFT below
        elif magic in (b"P5", b"P6"):
            channels = 1 if magic == b"P5" else 3
            width, height, maxval = (int(t) for t in _read_pnm_tokens(f, 3))
            if maxval != 255:
                raise FormatError(f"unsupported PNM maxval {maxval}; only 255")
            payload = f.read(width * height * channels)
            if len(payload) != width * height * channels:
                raise FormatError("truncated PNM payload")
            img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
            return (img.astype(np.float32) / 255.0)
        else:
            raise FormatError(f"unrecognized image magic {magic!r}")
    arr = load_hift(path)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"HIFT image must be rank 2 or 3, got rank {arr.ndim}")
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def save_image(path, img: np.ndarray) -> None:
    """Write by extension: .ppm (P6), .pgm (P5), .hift (raw float)."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise DimensionError(f"expected (H,W,C) image, got shape {img.shape}")
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".hift":
        save_hift(path, np.ascontiguousarray(img, dtype=np.float32))
        return
    quant = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, c = quant.shape
    if ext == ".pgm":
        if c != 1:
            raise DimensionError(f"PGM stores 1 channel, got {c}")
        header = f"P5\n{w} {h}\n255\n"
    elif ext == ".ppm":
        if c != 3:
            raise DimensionError(f"PPM stores 3 channels, got {c}")
        header = f"P6\n{w} {h}\n255\n"
    else:
        raise FormatError(f"unsupported image extension {ext!r}")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(quant.tobytes())
