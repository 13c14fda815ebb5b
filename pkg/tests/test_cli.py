import csv
import json

import numpy as np
import pytest

from cubeqa.backbone import read_feature_file
from cubeqa.cli import main
from cubeqa.pipeline import DatasetManifest, load_pipeline_checkpoint, score_manifest
from cubeqa.plotting import load_png
from cubeqa.regressor import load_checkpoint

SMALL = ["--render-resolution", "128", "--splat-radius", "1", "--resize-min", "64", "--crop-size", "48"]
NET = ["--widths-c", "4,8", "--widths-s", "4,8"]
TRAIN = ["--epochs", "10", "--k-folds", "3", "--hidden", "8", "--lr", "1e-3"]


def read_scores(path):
    with open(path) as fh:
        return {r["id"]: float(r["score"]) for r in csv.DictReader(fh)}


def test_synth_subcommand(tmp_path, capsys):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--contents", "3", "--levels", "1",
                 "--points", "400", "--test-contents", "1"]) == 0
    paths = json.loads(capsys.readouterr().out)
    assert len(DatasetManifest.read(paths["manifest"])) == 12
    assert len(DatasetManifest.read(paths["test"])) == 4
    assert (out / "synth.json").exists()


def test_render_subcommand(tiny_synth, tmp_path):
    ply = tiny_synth.parent / "ref" / "c000.ply"
    assert main(["render", str(ply), "--out", str(tmp_path), *SMALL]) == 0
    faces = [load_png(tmp_path / f"c000_f{k}.png") for k in range(6)]
    assert all(f.shape == (128, 128, 3) for f in faces)
    assert (tmp_path / "c000_cube.png").exists()
    assert json.loads((tmp_path / "config.json").read_text())["projection"]["render_resolution"] == 128
    assert main(["render", str(ply), "--out", str(tmp_path / "p"), "--preprocessed", "--no-figure", *SMALL]) == 0
    assert load_png(tmp_path / "p" / "c000_f0.png").shape == (48, 48, 3)


def test_train_score_evaluate(tiny_synth, tmp_path, capsys):
    ckpt = tmp_path / "ckpt"
    assert main(["train", "--manifest", str(tiny_synth), "--mode", "FR", "--out", str(ckpt),
                 *SMALL, *NET, *TRAIN]) == 0
    heads, side = load_checkpoint(ckpt)
    assert side["mode"] == "FR" and heads[0].input_dim == 16
    capsys.readouterr()

    scores = tmp_path / "s" / "scores.csv"
    assert main(["score-fr", "--checkpoint", str(ckpt), "--manifest", str(tiny_synth), "--out", str(scores)]) == 0
    got = read_scores(scores)
    assert len(got) == 12 and all(np.isfinite(v) for v in got.values())
    assert (scores.parent / "config.json").exists()

    row = list(DatasetManifest.read(tiny_synth))[2]
    assert main(["score-fr", "--checkpoint", str(ckpt), "--ref", str(row.reference), "--dist", str(row.distorted),
                 "--id", row.id]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "id,score" and float(lines[1].split(",")[1]) == got[row.id]

    ev = tmp_path / "eval"
    assert main(["evaluate", "--manifest", str(tiny_synth), "--checkpoint", str(ckpt), "--out", str(ev)]) == 0
    text = capsys.readouterr().out
    for key in ("PLCC", "SRCC", "D/S_auc", "B/W_cc", "RC"):
        assert key in text
    for name in ("report.csv", "report.txt", "scores.csv", "pairs.csv", "config.json"):
        assert (ev / name).exists()


def test_oracle_evaluate(tiny_synth, tmp_path):
    ckpt = tmp_path / "ckpt"
    assert main(["train", "--manifest", str(tiny_synth), "--mode", "NR", "--out", str(ckpt),
                 *SMALL, *NET, "--epochs", "1", "--k-folds", "2", "--hidden", "4"]) == 0
    assert main(["evaluate", "--manifest", str(tiny_synth), "--checkpoint", str(ckpt),
                 "--out", str(tmp_path / "o"), "--oracle", "--significance", "threshold", "--delta", "0.5"]) == 0
    with open(tmp_path / "o" / "report.csv") as fh:
        vals = {r["metric"]: float(r["value"]) for r in csv.DictReader(fh)}
    assert vals["PLCC"] == pytest.approx(1) and vals["SRCC"] == pytest.approx(1) and vals["B/W_cc"] == 1.0


def test_extract_and_external_backend(tiny_synth, tmp_path):
    feats = tmp_path / "feats"
    assert main(["extract", "--manifest", str(tiny_synth), "--out", str(feats), *SMALL, *NET]) == 0
    assert read_feature_file(feats / "c000_f3_s.feat").shape == (12, 12, 8)
    assert (feats / "config.json").exists()

    native = tmp_path / "native"
    assert main(["train", "--manifest", str(tiny_synth), "--mode", "NR", "--out", str(native),
                 *SMALL, *NET, *TRAIN]) == 0
    external = tmp_path / "external"
    assert main(["train", "--manifest", str(tiny_synth), "--mode", "NR", "--out", str(external),
                 "--external-features", str(feats), "--feature-channels", "8", *TRAIN]) == 0
    m = DatasetManifest.read(tiny_synth)
    heads, cfg_n, _ = load_pipeline_checkpoint(native)
    _, cfg_e, _ = load_pipeline_checkpoint(external)
    a = score_manifest(m, cfg_n, heads, "NR")
    b = score_manifest(m, cfg_e, heads, "NR")
    # stored maps are float32, so agreement is to single precision
    assert np.allclose(a, b, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("argv, code", [
    (["score-nr", "--checkpoint", "/nonexistent/ckpt", "--dist", "x.ply"], "CheckpointError"),
    (["render", "/nonexistent.ply", "--out", "/tmp/cubeqa_never"], "FileNotFoundError"),
])
def test_error_line(argv, code, capsys):
    assert main(argv) == 1
    err = capsys.readouterr().err.strip().splitlines()[-1]
    payload = json.loads(err)
    assert payload["error"] == code and payload["message"]


def test_malformed_ply_error_code(tmp_path, capsys):
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n"
                    b"property float y\nproperty float z\nproperty uchar red\nproperty uchar green\n"
                    b"property uchar blue\nend_header\n0 0 0 1 2 3\n")
    assert main(["render", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "TruncatedBody"
