"""Command-line entry point.

One subcommand per capability; all file outputs land under ``--out``.
Exit codes: 0 success, 1 runtime failure (e.g. diverged training),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import checks
from .analysis import (analytic_complexity, empirical_flops, receptive_field_probe,
                       save_footprint_pgm, shift_ablation_harness,
                       window_plateau_harness)
from .attention import WindowGeom
from .errors import (ConfigurationError, ContractError, DimensionError, DomainError,
                     FormatError, GeometryError, HiflowError, TrainingDivergedError)
from .layer import build_variant, hiir_layer
from .model import HiIRConfig, build_model, format_config, param_count, parse_config
from .pipeline import (evaluate_l1, infer, load_image, make_toy_dataset, psnr,
                       save_image, train_toy, worker_threads)
from .report import write_csv
from .scaling import WarmupSchedule, default_milestones, grad_magnitude_probe, lr_at
from .serialize import load_checkpoint, save_checkpoint
from .tensor import Tensor

_CONFIG_FLAGS = {
    "task": str, "scale": int, "channels": int, "heads": int, "ffn_ratio": int,
    "p": int, "s": int, "variant": str, "stages": int, "layers_per_stage": int,
    "conv_kind": str, "score_kind": str, "init_scheme": str, "tau": float,
    "in_channels": int, "seed": int,
}


def _add_config_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="config file of key = value lines; flags override")
    for name, ty in _CONFIG_FLAGS.items():
        sp.add_argument(f"--{name.replace('_', '-')}", type=ty, default=None,
                        help=f"model config field {name}")
    sp.add_argument("--shift", dest="shift", action="store_true", default=None,
                    help="enable window shifting on alternating layers")
    sp.add_argument("--no-shift", dest="shift", action="store_false", default=None,
                    help="disable window shifting")


def _resolve_config(args) -> HiIRConfig:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = parse_config(f.read())
    else:
        cfg = HiIRConfig()
    overrides = {}
    for f in fields(HiIRConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = val
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides) if overrides else cfg


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiflow",
        description="Hierarchical information-flow restoration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("check", help="run the invariant self-check suite")
    sp.add_argument("--all", action="store_true", help="run every check group")
    sp.add_argument("--group", action="append", default=None,
                    help="run one named group (repeatable)")
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="random seed")

    sp = sub.add_parser("bench", help="analytic vs measured MAC counts")
    sp.add_argument("--kind", default="proposed",
                    choices=["proposed", "window", "window-large", "global"])
    sp.add_argument("--B", type=int, default=1, help="batch size")
    sp.add_argument("--H", type=int, default=64, help="input height")
    sp.add_argument("--W", type=int, default=64, help="input width")
    sp.add_argument("--C", type=int, default=16, help="channels")
    sp.add_argument("--p", type=int, default=8, help="window side")
    sp.add_argument("--s", type=int, default=2, help="window-grid side")
    sp.add_argument("--gamma", type=int, default=2, help="FFN expansion ratio")
    sp.add_argument("--heads", type=int, default=2, help="attention heads")
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="random seed")

    sp = sub.add_parser("probe-rf", help="gradient receptive-field footprint")
    _add_config_flags(sp)
    sp.add_argument("--layers", type=int, default=1, help="stack depth")
    sp.add_argument("--H", type=int, default=32, help="input height")
    sp.add_argument("--W", type=int, default=32, help="input width")
    sp.add_argument("--pixel", default=None, help="probe pixel as Y,X (default center)")
    sp.add_argument("--linear-ffn", action="store_true",
                    help="replace the depthwise conv with identity")
    sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("grad-compare", help="per-parameter gradient magnitudes")
    _add_config_flags(sp)
    sp.add_argument("--depth", type=int, default=8, help="stack depth")
    sp.add_argument("--score", default=None, choices=["dot", "cosine"],
                    help="alias for --score-kind")
    sp.add_argument("--H", type=int, default=8, help="input height")
    sp.add_argument("--W", type=int, default=8, help="input width")
    sp.add_argument("--query-scale", type=float, default=1.0,
                    help="scale factor applied to the probe input")
    sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("plateau", help="window-size cost scaling table")
    _add_config_flags(sp)
    sp.add_argument("--p-list", default="8,16,32", help="comma-separated window sides")
    sp.add_argument("--H", type=int, default=64, help="reference height")
    sp.add_argument("--W", type=int, default=64, help="reference width")
    sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("shift-ablate", help="toy shift on/off training pair")
    _add_config_flags(sp)
    sp.add_argument("--iters", type=int, default=60, help="training iterations")
    sp.add_argument("--images", type=int, default=4, help="toy dataset size")
    sp.add_argument("--size", type=int, default=32, help="toy image side")
    sp.add_argument("--sigma", type=float, default=25.0, help="AWGN sigma (denoise)")
    sp.add_argument("--base-lr", type=float, default=2e-3, help="peak learning rate")
    sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("train", help="toy overfit training run")
    _add_config_flags(sp)
    sp.add_argument("--iters", type=int, default=500, help="training iterations")
    sp.add_argument("--images", type=int, default=8, help="toy dataset size")
    sp.add_argument("--size", type=int, default=32, help="toy image side")
    sp.add_argument("--sigma", type=float, default=25.0, help="AWGN sigma (denoise)")
    sp.add_argument("--batch", type=int, default=2, help="minibatch size")
    sp.add_argument("--base-lr", type=float, default=2e-3, help="peak learning rate")
    sp.add_argument("--warmup", type=int, default=None,
                    help="warmup iterations (default: 10%% of iters)")
    sp.add_argument("--workers", type=int, default=1,
                    help="worker threads (determinism guaranteed at 1)")
    sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("infer", help="restore one image with a trained model")
    sp.add_argument("--checkpoint", required=True, help="model .ckpt archive")
    sp.add_argument("--model-config", required=True, help="config file saved at training")
    sp.add_argument("--input", required=True, help="input image (.ppm/.pgm/.hift)")
    sp.add_argument("--output", required=True, help="output image path")
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="random seed")

    sp = sub.add_parser("inspect", help="describe a checkpoint, config or tensor file")
    sp.add_argument("--checkpoint", help="checkpoint archive to list")
    sp.add_argument("--model-config", help="config file; prints the parameter breakdown")
    sp.add_argument("--tensor", help="HIFT tensor file to describe")
    sp.add_argument("--reference", default=None,
                    help="H,W reference input for MAC counting (with --model-config)")
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    return parser


def _cmd_check(args) -> int:
    selected = None if args.all or not args.group else set(args.group)
    failures = 0
    for name, fn in checks.CHECKS:
        if selected is not None and name not in selected:
            continue
        try:
            fn()
            print(f"[ok]   {name}")
        except Exception as exc:  # noqa: BLE001 - report and keep going
            failures += 1
            print(f"[FAIL] {name}: {exc}")
    if selected is not None and not selected & {n for n, _ in checks.CHECKS}:
        raise ConfigurationError(f"unknown check group(s): {sorted(selected)}")
    return 1 if failures else 0


def _cmd_bench(args) -> int:
    kind = args.kind.replace("-", "_")
    rep = analytic_complexity(kind, args.B, args.H, args.W, args.C,
                              p=args.p, s=args.s, gamma=args.gamma, heads=args.heads)
    empirical = ""
    if kind in ("proposed", "window"):
        rng = np.random.default_rng(args.seed)
        geom = WindowGeom(args.H, args.W, args.p, args.s)
        variant = "v3" if kind == "proposed" else "v1"
        layers = build_variant(variant, args.C, args.heads, args.gamma, geom, 1, rng)
        empirical = empirical_flops(
            lambda x: hiir_layer(x, layers[0], geom), (args.B, args.H, args.W, args.C),
            seed=args.seed)
    out = _outdir(args)
    path = os.path.join(out, "bench.csv")
    ratio = (empirical / rep.time_total) if empirical != "" else ""
    write_csv(path, ["kind", "B", "H", "W", "C", "p", "s", "gamma", "heads",
                     "analytic_macs", "empirical_macs", "ratio"],
              [[rep.kind, args.B, args.H, args.W, args.C, args.p, args.s,
                args.gamma, args.heads, rep.time_total, empirical, ratio]])
    for name, val in rep.time_terms:
        print(f"time  {name:14s} {val}")
    for name, val in rep.space_terms:
        print(f"space {name:14s} {val}")
    print(f"analytic total {rep.time_total}  empirical {empirical or 'n/a'}")
    print(f"wrote {path}")
    return 0


def _cmd_probe_rf(args) -> int:
    cfg = _resolve_config(args)
    if args.pixel is None:
        pixel = (args.H // 2, args.W // 2)
    else:
        y, x = args.pixel.split(",")
        pixel = (int(y), int(x))
    rng = np.random.default_rng(cfg.seed)
    geom = WindowGeom(args.H, args.W, cfg.p, cfg.s)
    layers = build_variant(cfg.variant, cfg.channels, cfg.heads, cfg.ffn_ratio, geom,
                           args.layers, rng, score_kind=cfg.score_kind, tau=cfg.tau,
                           dtype="f64", shift=cfg.shift,
                           spatial_identity=args.linear_ffn)

    def forward(x):
        t = x
        for layer in layers:
            t = hiir_layer(t, layer, geom)
        return t

    fp = receptive_field_probe(forward, (1, args.H, args.W, cfg.channels), pixel)
    out = _outdir(args)
    save_footprint_pgm(os.path.join(out, "footprint.pgm"), fp)
    block = cfg.p * cfg.s
    write_csv(os.path.join(out, "rf.csv"),
              ["probe_y", "probe_x", "y0", "x0", "y1", "x1",
               "extent_h", "extent_w", "area", "block_P", "paper_two_layer_rf"],
              [[*fp.probe_pixel, *fp.bbox, *fp.extent, fp.area, block, 16 * block]])
    print(f"footprint bbox {fp.bbox} extent {fp.extent} area {fp.area}")
    print(f"block P = {block}; tabulated two-layer receptive field 16P = {16 * block}"
          " (reported, not asserted)")
    print(f"wrote {os.path.join(out, 'footprint.pgm')} and rf.csv")
    return 0


def _cmd_grad_compare(args) -> int:
    cfg = _resolve_config(args)
    if args.score is not None:
        cfg = replace(cfg, score_kind=args.score)
    rng = np.random.default_rng(cfg.seed)
    geom = WindowGeom(args.H, args.W, cfg.p, cfg.s)
    layers = build_variant(cfg.variant, cfg.channels, cfg.heads, cfg.ffn_ratio, geom,
                           args.depth, rng, score_kind=cfg.score_kind, tau=cfg.tau,
                           dtype="f64")

    class _Stack:
        def forward(self, x):
            t = x
            for layer in layers:
                t = hiir_layer(t, layer, geom)
            return t

        def named_params(self):
            for i, layer in enumerate(layers):
                yield from layer.named_params(f"layer{i}.")

    x = Tensor(np.random.default_rng(cfg.seed + 1).standard_normal(
        (1, args.H, args.W, cfg.channels)) * args.query_scale, dtype="f64")
    rows = grad_magnitude_probe(_Stack(), x)
    out = _outdir(args)
    path = os.path.join(out, f"grad_{cfg.score_kind}.csv")
    write_csv(path, ["layer_name", "param_name", "grad_max", "grad_mean", "grad_l2"],
              [[r.layer_name, r.param_name, repr(r.grad_max), repr(r.grad_mean),
                repr(r.grad_l2)] for r in rows])
    print(f"{cfg.score_kind}: max gradient {max(r.grad_max for r in rows):.6e}")
    print(f"wrote {path}")
    return 0


def _cmd_plateau(args) -> int:
    cfg = _resolve_config(args)
    sizes = [int(tok) for tok in args.p_list.split(",") if tok]
    rows = window_plateau_harness(cfg, sizes, h=args.H, w=args.W)
    out = _outdir(args)
    path = os.path.join(out, "plateau.csv")
    write_csv(path, ["p", "attention_macs", "total_macs", "peak_scalars"], rows)
    base = rows[0]
    for p, att, total, mem in rows:
        print(f"p={p:3d}  attention x{att / base[1]:.0f}  peak scalars x{mem / base[3]:.0f}")
    print(f"wrote {path}")
    return 0


def _cmd_shift_ablate(args) -> int:
    cfg = _resolve_config(args)
    dataset = make_toy_dataset(cfg, args.images, args.size, sigma=args.sigma,
                               seed=cfg.seed)
    warmup = max(1, args.iters // 10)
    schedule = WarmupSchedule(args.base_lr, warmup, default_milestones(args.iters))
    rows = shift_ablation_harness(cfg, dataset, args.iters, schedule, seed=cfg.seed)
    out = _outdir(args)
    path = os.path.join(out, "shift_ablation.csv")
    write_csv(path, ["shift", "psnr"], [[int(s), f"{v:.4f}"] for s, v in rows])
    for s, v in rows:
        print(f"shift={'on' if s else 'off'}  psnr={v:.4f} dB")
    print(f"wrote {path}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    workers = worker_threads(args.workers)
    if workers != 1:
        print("note: determinism is guaranteed only at worker count 1", file=sys.stderr)
    dataset = make_toy_dataset(cfg, args.images, args.size, sigma=args.sigma,
                               seed=cfg.seed)
    warmup = args.warmup if args.warmup is not None else max(1, args.iters // 10)
    schedule = WarmupSchedule(args.base_lr, warmup, default_milestones(args.iters))
    model, losses = train_toy(cfg, dataset, args.iters, schedule,
                              batch=args.batch, seed=cfg.seed, workers=workers)
    out = _outdir(args)
    write_csv(os.path.join(out, "loss.csv"), ["iter", "lr", "loss"],
              [[i, repr(lr_at(schedule, i)), repr(v)] for i, v in enumerate(losses)])
    save_checkpoint(os.path.join(out, "model.ckpt"), model.state_arrays())
    with open(os.path.join(out, "model.cfg"), "w", encoding="utf-8") as f:
        f.write(format_config(cfg))
    scores = []
    for lq, hq in dataset:
        restored = infer(model, lq)
        degraded = psnr(hq, np.clip(lq, 0, 1)) if cfg.task == "denoise" else ""
        scores.append((degraded, psnr(hq, restored)))
    write_csv(os.path.join(out, "metrics.csv"), ["psnr_degraded", "psnr_restored"],
              [[f"{a:.4f}" if a != "" else "", f"{b:.4f}"] for a, b in scores])
    final = evaluate_l1(model, dataset)
    print(f"final minibatch loss {losses[-1]:.6f}; dataset L1 {final:.6f}" if losses
          else "zero iterations requested; model left at initialization")
    print(f"wrote loss.csv, metrics.csv, model.ckpt, model.cfg under {out}")
    return 0


def _cmd_infer(args) -> int:
    with open(args.model_config, "r", encoding="utf-8") as f:
        cfg = parse_config(f.read())
    model = build_model(cfg)
    model.load_state(load_checkpoint(args.checkpoint))
    img = load_image(args.input)
    restored = infer(model, img)
    _outdir(args)
    save_image(args.output, restored)
    print(f"restored {args.input} -> {args.output} ({restored.shape[1]}x{restored.shape[0]})")
    return 0


def _cmd_inspect(args) -> int:
    shown = False
    if args.tensor:
        from .serialize import load_hift
        arr = load_hift(args.tensor)
        print(f"{args.tensor}: shape {tuple(arr.shape)} dtype {arr.dtype}")
        shown = True
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        for name, arr in state.items():
            print(f"{name:48s} {str(tuple(arr.shape)):20s} {arr.dtype}")
        print(f"{len(state)} tensors, {sum(a.size for a in state.values())} scalars")
        shown = True
    if args.model_config:
        with open(args.model_config, "r", encoding="utf-8") as f:
            cfg = parse_config(f.read())
        model = build_model(cfg)
        ref = None
        if args.reference:
            hh, ww = (int(t) for t in args.reference.split(","))
            ref = (1, hh, ww, cfg.in_channels)
        summary = param_count(model, reference_shape=ref)
        for name, count in sorted(summary.breakdown.items()):
            print(f"{name:16s} {count}")
        print(f"total parameters {summary.parameter_count}")
        if summary.reference_macs is not None:
            print(f"forward MACs at {summary.reference_shape}: {summary.reference_macs}")
        shown = True
    if not shown:
        raise ConfigurationError("inspect needs --checkpoint, --model-config or --tensor")
    return 0


_COMMANDS = {
    "check": _cmd_check,
    "bench": _cmd_bench,
    "probe-rf": _cmd_probe_rf,
    "grad-compare": _cmd_grad_compare,
    "plateau": _cmd_plateau,
    "shift-ablate": _cmd_shift_ablate,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "inspect": _cmd_inspect,
}

_USAGE_ERRORS = (ConfigurationError, GeometryError, DimensionError, DomainError,
                 FormatError, ContractError, FileNotFoundError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 1
    except HiflowError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
