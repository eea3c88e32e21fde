import os
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from rgbdglass import dataio
from rgbdglass.checkpoint import load_network
from rgbdglass.cli import main, split_counts
from rgbdglass.metrics import evaluate_set, format_report
from rgbdglass.training import predict


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, out = root / "data", root / "run"
    assert main(["synth", "--out", str(data), "--count", "10", "--seed", "1"]) == 0
    cfg = root / "run.cfg"
    cfg.write_text(f"dataset = {data}\nprofile = toy\nmax_steps = 4\nbatch_size = 4\nout = {out}\nseed = 2\n")
    assert main(["train", "--config", str(cfg)]) == 0
    return data, out


def test_split_counts():
    assert split_counts(0) == (0, 0)
    assert split_counts(1) == (1, 0)
    assert split_counts(8) == (7, 1)
    assert split_counts(100) == (90, 10)


def test_synth_layout_and_determinism(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "synth", "--out", tmp_path / name, "--count", 8, "--seed", 1, "--size", 32)
        assert code == 0
    for sub in dataio.SUBDIRS:
        files = sorted(os.listdir(tmp_path / "a" / sub))
        assert len(files) == 8
        for f in files:
            assert (tmp_path / "a" / sub / f).read_bytes() == (tmp_path / "b" / sub / f).read_bytes()
    train_ids = dataio.read_manifest(str(tmp_path / "a"), "train")
    test_ids = dataio.read_manifest(str(tmp_path / "a"), "test")
    assert len(train_ids) == 7 and len(test_ids) == 1 and not set(train_ids) & set(test_ids)


def test_synth_zero_count(tmp_path, capsys):
    assert run(capsys, "synth", "--out", tmp_path, "--count", 0)[0] == 0
    assert (tmp_path / "train.txt").read_text() == "" and (tmp_path / "test.txt").read_text() == ""


def test_usage_errors(tmp_path, capsys):
    assert run(capsys, "train")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "synth", "--out", tmp_path, "--count", -1)[0] == 1
    assert run(capsys, "synth", "--out", tmp_path, "--p-in", 0.01, "--p-out", 0.5)[0] == 1
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 1\n")
    code, _, err = run(capsys, "train", "--config", cfg)
    assert code == 1 and "unknown config key" in err
    assert run(capsys)[0] == 1


def test_runtime_errors(tmp_path, capsys):
    assert run(capsys, "train", "--dataset", tmp_path / "none", "--profile", "toy")[0] == 2
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "x.npz", "--dataset", tmp_path)
    assert code == 2


def test_train_outputs(trained):
    _, out = trained
    log = (out / "train.log").read_text().splitlines()
    assert log[0].startswith("epoch=1 loss=")
    assert log[-1].startswith("final train iou=")
    assert (out / "checkpoint.npz").exists()


def test_eval_matches_library(trained, capsys, tmp_path):
    data, out = trained
    report = tmp_path / "per_image.txt"
    code, stdout, _ = run(capsys, "eval", "--checkpoint", out / "checkpoint.npz", "--dataset", data, "--report", report)
    assert code == 0
    net, _ = load_network(str(out / "checkpoint.npz"))
    samples = dataio.validate_manifest(str(data), "test").samples()
    gts = [dataio.resize_nearest_np(s.mask, 96, 96) for s in samples]
    assert stdout.strip() == format_report(evaluate_set(predict(net, samples), gts))
    lines = report.read_text().splitlines()
    assert lines[0].startswith(samples[0].id + " iou=") and lines[-1] == "mean " + stdout.strip()


def test_eval_perfect_predictions(trained, capsys):
    data, _ = trained
    code, stdout, _ = run(capsys, "eval", "--predictions", data / "masks", "--dataset", data, "--split", "train")
    assert code == 0
    assert stdout.strip() == "iou=1.0000 fbeta=1.0000 mae=0.0000 ber=0.00"


def test_predict_pngs(trained, capsys, tmp_path):
    data, out = trained
    assert run(capsys, "predict", "--checkpoint", out / "checkpoint.npz", "--dataset", data, "--out", tmp_path)[0] == 0
    net, _ = load_network(str(out / "checkpoint.npz"))
    sample = dataio.validate_manifest(str(data), "test").samples()[0]
    prob = predict(net, [sample])[0]
    with Image.open(tmp_path / f"{sample.id}_prob.png") as im:
        np.testing.assert_array_equal(np.asarray(im), np.rint(prob * 255).astype(np.uint8))
    with Image.open(tmp_path / f"{sample.id}_mask.png") as im:
        np.testing.assert_array_equal(np.asarray(im), (prob >= 0.5) * 255)
    # single image pair
    rgb = data / "images" / f"{sample.id}.png"
    depth = data / "depths" / f"{sample.id}.png"
    single = tmp_path / "single"
    assert run(capsys, "predict", "--checkpoint", out / "checkpoint.npz", "--rgb", rgb, "--depth", depth, "--out", single)[0] == 0
    assert (single / f"{sample.id}_prob.png").read_bytes() == (tmp_path / f"{sample.id}_prob.png").read_bytes()
    assert run(capsys, "predict", "--checkpoint", out / "checkpoint.npz", "--rgb", rgb, "--out", single)[0] == 1


def test_stats_single_image(tmp_path, capsys):
    data = tmp_path / "d"
    s = dataio.Sample("only", np.full((8, 8, 3), 90, np.uint8), np.ones((8, 8), np.uint16), np.eye(8, dtype=np.uint8))
    dataio.write_sample(str(data), s)
    dataio.write_manifest(str(data), "train", ["only"])
    dataio.write_manifest(str(data), "test", [])
    code, stdout, _ = run(capsys, "stats", "--dataset", data, "--out", tmp_path / "st", "--grid", 8)
    assert code == 0
    assert f"area_mean={dataio.area_ratio(s.mask):.4f}" in stdout
    with Image.open(tmp_path / "st" / "location.png") as im:
        np.testing.assert_array_equal(np.asarray(im), np.eye(8) * 255)
    assert "n=1" in (tmp_path / "st" / "area.txt").read_text()


def test_gradcheck_exits_zero(capsys):
    code, stdout, _ = run(capsys, "gradcheck")
    assert code == 0
    assert "FAIL" not in stdout and "checks passed" in stdout


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "rgbdglass", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "synth" in res.stdout and "trainable_gamma" in res.stdout
