import csv
import os

import numpy as np
import pytest

from hiflow.cli import build_parser, main
from hiflow.model import HiIRConfig, format_config
from hiflow.pipeline import load_image, save_image


def run(argv):
    return main(argv)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


SUBCOMMANDS = ["check", "bench", "probe-rf", "grad-compare", "plateau",
               "shift-ablate", "train", "infer", "inspect"]


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_documents_flags(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        run([cmd, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "--out" in text
    expected = {
        "check": ["--all", "--group"],
        "bench": ["--kind", "--H", "--W", "--C", "--p", "--s", "--gamma", "--heads"],
        "probe-rf": ["--layers", "--pixel", "--linear-ffn"],
        "grad-compare": ["--depth", "--score", "--query-scale"],
        "plateau": ["--p-list"],
        "shift-ablate": ["--iters", "--images", "--sigma"],
        "train": ["--iters", "--images", "--batch", "--base-lr", "--warmup", "--workers"],
        "infer": ["--checkpoint", "--model-config", "--input", "--output"],
        "inspect": ["--checkpoint", "--model-config", "--tensor", "--reference"],
    }
    for flag in expected[cmd]:
        assert flag in text, (cmd, flag)


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["restore-everything"])
    assert exc.value.code == 2


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["bench", "--frobnicate", "1"])
    assert exc.value.code == 2


def test_bench_worked_value(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert run(["bench", "--kind", "proposed", "--H", "64", "--W", "64", "--C", "16",
                "--p", "8", "--s", "2", "--gamma", "2", "--heads", "2",
                "--out", out]) == 0
    rows = read_csv(os.path.join(out, "bench.csv"))
    assert rows[0]["analytic_macs"] == "16121856"
    ratio = float(rows[0]["ratio"])
    assert 0.8 <= ratio <= 1.3


def test_bench_bad_geometry_exits_2(tmp_path):
    assert run(["bench", "--kind", "proposed", "--H", "63", "--W", "64",
                "--out", str(tmp_path / "o")]) == 2


def test_plateau_ratios(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert run(["plateau", "--p-list", "8,16,32", "--out", out]) == 0
    rows = read_csv(os.path.join(out, "plateau.csv"))
    att = {int(r["p"]): int(r["attention_macs"]) for r in rows}
    assert att[16] == 4 * att[8] and att[32] == 16 * att[8]


def test_probe_rf_outputs(tmp_path):
    out = str(tmp_path / "o")
    assert run(["probe-rf", "--layers", "1", "--channels", "8", "--heads", "2",
                "--p", "4", "--s", "2", "--H", "32", "--W", "32",
                "--pixel", "13,21", "--linear-ffn", "--out", out]) == 0
    rows = read_csv(os.path.join(out, "rf.csv"))
    assert rows[0]["extent_h"] == "8" and rows[0]["extent_w"] == "8"
    assert rows[0]["paper_two_layer_rf"] == "128"
    mask = load_image(os.path.join(out, "footprint.pgm"))
    assert mask.shape == (32, 32, 1)
    assert int((mask > 0.5).sum()) == 64


def test_grad_compare_cosine_exceeds_dot(tmp_path):
    out = str(tmp_path / "o")
    for score in ("dot", "cosine"):
        assert run(["grad-compare", "--depth", "4", "--score", score,
                    "--channels", "16", "--heads", "2", "--p", "2", "--s", "2",
                    "--H", "8", "--W", "8", "--out", out]) == 0
    gmax = {}
    for score in ("dot", "cosine"):
        rows = read_csv(os.path.join(out, f"grad_{score}.csv"))
        gmax[score] = max(float(r["grad_max"]) for r in rows)
    assert gmax["cosine"] > gmax["dot"]


def test_train_and_infer_roundtrip(tmp_path):
    out = str(tmp_path / "run")
    code = run(["train", "--task", "denoise", "--scale", "1", "--channels", "8",
                "--heads", "2", "--p", "2", "--s", "2", "--layers-per-stage", "1",
                "--iters", "6", "--images", "2", "--size", "32", "--sigma", "15",
                "--seed", "3", "--out", out])
    assert code == 0
    for name in ("loss.csv", "metrics.csv", "model.ckpt", "model.cfg"):
        assert os.path.exists(os.path.join(out, name)), name
    rows = read_csv(os.path.join(out, "loss.csv"))
    assert len(rows) == 6

    img = np.random.default_rng(0).random((20, 21, 3)).astype(np.float32)
    src = str(tmp_path / "in.ppm")
    dst = str(tmp_path / "restored.ppm")
    save_image(src, img)
    assert run(["infer", "--checkpoint", os.path.join(out, "model.ckpt"),
                "--model-config", os.path.join(out, "model.cfg"),
                "--input", src, "--output", dst, "--out", out]) == 0
    restored = load_image(dst)
    assert restored.shape == (20, 21, 3)


def test_train_idempotent_outputs(tmp_path):
    args = ["train", "--task", "denoise", "--scale", "1", "--channels", "8",
            "--heads", "2", "--p", "2", "--s", "2", "--layers-per-stage", "1",
            "--iters", "4", "--images", "2", "--size", "32", "--seed", "5"]
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert run(args + ["--out", out1]) == 0
    assert run(args + ["--out", out2]) == 0
    for name in ("loss.csv", "model.ckpt"):
        with open(os.path.join(out1, name), "rb") as f1, \
                open(os.path.join(out2, name), "rb") as f2:
            assert f1.read() == f2.read(), name


def test_config_file_flag_override(tmp_path):
    cfg_path = tmp_path / "m.cfg"
    cfg_path.write_text(format_config(HiIRConfig(task="denoise", scale=1,
                                                 channels=8, heads=2, p=2, s=2)))
    out = str(tmp_path / "o")
    # flag overrides the config file's channels
    assert run(["probe-rf", "--config", str(cfg_path), "--channels", "4",
                "--heads", "1", "--H", "16", "--W", "16", "--layers", "1",
                "--linear-ffn", "--out", out]) == 0


def test_bad_config_key_exits_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("wavelets = 9\n")
    assert run(["probe-rf", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_inspect_checkpoint_and_config(tmp_path, capsys):
    out = str(tmp_path / "run")
    run(["train", "--task", "denoise", "--scale", "1", "--channels", "8",
         "--heads", "2", "--p", "2", "--s", "2", "--layers-per-stage", "1",
         "--iters", "2", "--images", "2", "--size", "32", "--out", out])
    capsys.readouterr()
    assert run(["inspect", "--checkpoint", os.path.join(out, "model.ckpt"),
                "--out", out]) == 0
    text = capsys.readouterr().out
    assert "stage0.layer0" in text and "tensors" in text
    assert run(["inspect", "--model-config", os.path.join(out, "model.cfg"),
                "--reference", "32,32", "--out", out]) == 0
    text = capsys.readouterr().out
    assert "total parameters" in text and "forward MACs" in text


def test_inspect_without_target_exits_2(tmp_path):
    assert run(["inspect", "--out", str(tmp_path / "o")]) == 2


def test_check_runs_quick_groups(capsys):
    assert run(["check", "--group", "warmup", "--group", "psnr",
                "--group", "analytic-worked-value", "--out", "/tmp/hiflow-check"]) == 0
    out = capsys.readouterr().out
    assert out.count("[ok]") == 3


def test_check_unknown_group_exits_2(capsys):
    assert run(["check", "--group", "nonsense", "--out", "/tmp/hiflow-check"]) == 2
