import csv
import re

import numpy as np
import pytest

from golden import TABLE_2
from scalelab.architecture import arch_from_file, arch_to_file, preset
from scalelab.cli import main
from scalelab.data import write_ppm
from scalelab.metrics import history_write
from scalelab.training import EpochRecord, build_model, save_model

TINY = """name: tiny
input: [16,16,3]
layer: type=conv2d filters=4 kernel=3 activation=relu
layer: type=maxpool2d pool=2
layer: type=flatten
layer: type=dense units=2 activation=softmax
"""


def table_rows(text):
    rows = []
    for line in text.splitlines():
        m = re.match(r"^(\w+)\s+\(None,([\d,]+)\)\s+([\d,]+)$", line.strip())
        if m:
            shape = tuple(int(v) for v in m.group(2).split(","))
            rows.append((m.group(1), shape, int(m.group(3).replace(",", ""))))
    return rows


def polylines(svg):
    return {
        name: [tuple(map(float, p.split(","))) for p in pts.split()]
        for name, pts in re.findall(r'<polyline data-series="([^"]+)"[^>]*points="([^"]*)"', svg)
    }


@pytest.fixture
def tiny_arch(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text(TINY)
    return path


@pytest.fixture
def corpus(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--n", "10", "--res", "16", "--seed", "1"]) == 0
    return out


def train_args(arch, data, out, *extra):
    return ["train", "--arch", str(arch), "--data", str(data), "--epochs", "1", "--batch", "4",
            "--lr", "1e-3", "--seed", "2", "--val-fraction", "0.3", "--out", str(out), *extra]


# --- summary / scale ---------------------------------------------------------

def test_summary_compound(capsys):
    assert main(["summary", "--arch", "compound"]) == 0
    out = capsys.readouterr().out
    assert table_rows(out) == TABLE_2
    assert out.rstrip().endswith("Total params: 523,138")


def test_summary_identity_flags(capsys):
    main(["summary", "--arch", "baseline"])
    plain = capsys.readouterr().out
    main(["summary", "--arch", "baseline", "--width", "1", "--depth", "1"])
    assert capsys.readouterr().out == plain


def test_summary_unknown_preset(capsys):
    assert main(["summary", "--arch", "nosuch"]) == 2
    assert "nosuch" in capsys.readouterr().err


def test_summary_bad_flag():
    assert main(["summary", "--arch", "baseline", "--width", "0.5"]) == 2
    assert main(["summary"]) == 2


def test_scale_depth(tmp_path, capsys):
    out = tmp_path / "deep.txt"
    assert main(["scale", "--base", "baseline", "--depth", "3", "--out", str(out)]) == 0
    assert "523,138" in capsys.readouterr().out
    main(["summary", "--arch", str(out)])
    assert table_rows(capsys.readouterr().out) == TABLE_2


def test_scale_identity_round_trip(tmp_path):
    base = tmp_path / "base.txt"
    base.write_text(arch_to_file(preset("width")))
    out = tmp_path / "same.txt"
    assert main(["scale", "--base", str(base), "--width", "1", "--depth", "1", "--resolution", "1", "--out", str(out)]) == 0
    assert arch_from_file(out.read_text()) == preset("width")


def test_scale_collapse(tmp_path, capsys):
    assert main(["scale", "--base", "baseline", "--resolution", "0.01", "--out", str(tmp_path / "x.txt")]) == 3
    assert "layer" in capsys.readouterr().err
    assert not (tmp_path / "x.txt").exists()


def test_scale_parse_error(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("input: [8,8,1]\nlayer: type=bogus\n")
    assert main(["scale", "--base", str(bad), "--out", str(tmp_path / "o.txt")]) == 2


# --- synth -------------------------------------------------------------------

def test_synth_counts(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "--out", str(out), "--n", "10", "--res", "36", "--seed", "0"]) == 0
    assert len(list(out.glob("*.ppm"))) == 20
    assert len((out / "labels.csv").read_text().splitlines()) == 21


def test_synth_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        main(["synth", "--out", str(tmp_path / name), "--n", "3", "--res", "16", "--seed", "9"])
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_synth_resolution_guard(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--n", "2", "--res", "8"]) == 2


# --- train / evaluate --------------------------------------------------------

def test_train_smoke(tiny_arch, corpus, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(train_args(tiny_arch, corpus, run)) == 0
    assert "epoch 1:" in capsys.readouterr().out
    for name in ("arch.txt", "model.bin", "history.csv", "metrics.txt", "roc.csv", "manifest.json", "val_labels.csv"):
        assert (run / name).is_file(), name
    assert len((run / "history.csv").read_text().splitlines()) == 2


def test_train_deterministic(tiny_arch, corpus, tmp_path):
    for name in ("r1", "r2"):
        assert main(train_args(tiny_arch, corpus, tmp_path / name, "--epochs", "2")) == 0
    for f in ("history.csv", "model.bin", "metrics.txt", "roc.csv"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes(), f


def test_train_bad_inputs(tiny_arch, corpus, tmp_path):
    assert main(train_args("nosuch", corpus, tmp_path / "r")) == 2
    assert main(train_args(tiny_arch, tmp_path / "missing", tmp_path / "r")) == 2
    assert main(train_args(tiny_arch, corpus, tmp_path / "r", "--lr", "nan")) == 2
    assert main(train_args(tiny_arch, corpus, tmp_path / "r", "--epochs", "0")) == 2
    assert not (tmp_path / "r").exists()


def test_single_class_validation_skips_roc(tiny_arch, tmp_path):
    data = tmp_path / "d"
    main(["synth", "--out", str(data), "--n", "4", "--res", "16"])
    rows = (data / "labels.csv").read_text().splitlines()
    # relabel everything benign
    (data / "labels.csv").write_text("\n".join([rows[0]] + [r.rsplit(",", 1)[0] + ",0" for r in rows[1:]]) + "\n")
    run = tmp_path / "run"
    assert main(train_args(tiny_arch, data, run)) == 0
    assert "auc: undefined" in (run / "metrics.txt").read_text()
    assert not (run / "roc.csv").exists()


def test_train_divergence_exit(tiny_arch, corpus, tmp_path, capsys):
    assert main(train_args(tiny_arch, corpus, tmp_path / "r", "--lr", "1e30")) == 4
    assert "epoch 1" in capsys.readouterr().err


def test_evaluate_matches_final_epoch(tiny_arch, corpus, tmp_path):
    run, ev = tmp_path / "run", tmp_path / "ev"
    main(train_args(tiny_arch, corpus, run, "--epochs", "2"))
    args = ["evaluate", "--model", str(run / "model.bin"), "--data", str(corpus),
            "--labels", str(run / "val_labels.csv"), "--out", str(ev)]
    assert main(args) == 0
    assert (ev / "metrics.txt").read_text() == (run / "metrics.txt").read_text()
    assert (ev / "roc.csv").read_bytes() == (run / "roc.csv").read_bytes()
    with open(run / "history.csv") as fh:
        last = list(csv.DictReader(fh))[-1]
    acc = float(re.search(r"^accuracy: (\S+)$", (ev / "metrics.txt").read_text(), re.M).group(1))
    assert float(last["val_acc"]) == pytest.approx(acc, abs=1e-6)


def test_evaluate_resolution_mismatch(tiny_arch, tmp_path, capsys):
    model = tmp_path / "m.bin"
    save_model(build_model(arch_from_file(TINY), 0), model)
    data = tmp_path / "big"
    main(["synth", "--out", str(data), "--n", "2", "--res", "20"])
    capsys.readouterr()
    assert main(["evaluate", "--model", str(model), "--data", str(data), "--out", str(tmp_path / "e")]) == 2
    err = capsys.readouterr().err
    assert "(20, 20, 3)" in err and "(16, 16, 3)" in err
    assert main(["evaluate", "--model", str(model), "--data", str(data), "--resize", "--out", str(tmp_path / "e")]) == 0


def test_evaluate_corrupt_model(corpus, tmp_path):
    model = tmp_path / "m.bin"
    model.write_bytes(b"SCLB\x09\x00junk")
    assert main(["evaluate", "--model", str(model), "--data", str(corpus), "--out", str(tmp_path / "e")]) == 2


def test_evaluate_hand_enumerated_confusion(tmp_path):
    model = build_model(arch_from_file(TINY), 0)
    conv, dense = model.layers[0].params, model.layers[-1].params
    # the conv passes the red channel through; the dense layer compares its mean with 0.5
    conv["weight"][...] = 0
    conv["weight"][1, 1, 0, :] = 1
    dense["weight"][...] = 0
    dense["weight"][:, 1] = 1 / dense["weight"].shape[0]
    dense["bias"][...] = [0.5, 0]
    save_model(model, tmp_path / "m.bin")

    reds = [10, 200, 240, 30, 220, 100]
    labels = [0, 0, 1, 1, 1, 0]
    data = tmp_path / "d"
    data.mkdir()
    for i, r in enumerate(reds):
        img = np.zeros((16, 16, 3), np.uint8)
        img[..., 0] = r
        write_ppm(data / f"s{i}.ppm", img)
    (data / "labels.csv").write_text("id,label\n" + "".join(f"s{i},{y}\n" for i, y in enumerate(labels)))

    # predictions by hand: red > 127.5 means malignant -> 0,1,1,0,1,0
    assert main(["evaluate", "--model", str(tmp_path / "m.bin"), "--data", str(data), "--out", str(tmp_path / "e")]) == 0
    text = (tmp_path / "e" / "metrics.txt").read_text()
    assert "benign,2,1" in text and "malignant,1,2" in text


# --- report ------------------------------------------------------------------

def write_run(run, n_epochs, roc_points=((0.0, 0.0), (0.0, 1.0), (1.0, 1.0))):
    run.mkdir()
    g = np.random.default_rng(0)
    history_write([EpochRecord(i + 1, *g.random(4)) for i in range(n_epochs)], run / "history.csv")
    (run / "roc.csv").write_text("fpr,tpr\n" + "".join(f"{a},{b}\n" for a, b in roc_points))


def test_report_point_counts(tmp_path):
    run = tmp_path / "run"
    write_run(run, 20)
    assert main(["report", "--run", str(run)]) == 0
    for name in ("accuracy.svg", "loss.svg"):
        lines = polylines((run / "plots" / name).read_text())
        assert set(lines) == {"train", "validation"}
        assert all(len(pts) == 20 for pts in lines.values())


def test_report_perfect_roc_corner(tmp_path):
    run = tmp_path / "run"
    write_run(run, 3)
    main(["report", "--run", str(run)])
    svg = (run / "plots" / "roc.svg").read_text()
    (curve,) = polylines(svg).values()
    # plot area origin (70, 390); the (fpr 0, tpr 1) corner sits at the top-left
    assert (70.0, 50.0) in curve
    assert 'class="chance"' in svg


def test_report_empty_history(tmp_path):
    run = tmp_path / "run"
    write_run(run, 0)
    assert main(["report", "--run", str(run)]) == 2


def test_report_missing_files(tmp_path, capsys):
    run = tmp_path / "run"
    run.mkdir()
    assert main(["report", "--run", str(run)]) == 2
    err = capsys.readouterr().err
    assert "history.csv" in err and "roc.csv" in err
