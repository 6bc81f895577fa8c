import csv
import json

import pytest

from muval.cli import build_parser, run
from muval.volume_io import load_samples


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["synth", "--out", str(root / "d"), "--per-class", "3", "--seed", "7"]) == 0
    return root


def test_synth_is_reproducible(dataset, tmp_path):
    assert run(["synth", "--out", str(tmp_path / "d"), "--per-class", "3", "--seed", "7"]) == 0
    first = sorted(p.name for p in (dataset / "d").iterdir())
    assert first == sorted(p.name for p in (tmp_path / "d").iterdir())
    for name in first:
        assert (dataset / "d" / name).read_bytes() == (tmp_path / "d" / name).read_bytes()


def test_synth_manifest_is_balanced(dataset):
    rows = list(csv.reader(open(dataset / "d" / "manifest.csv")))
    assert len(rows) == 6 and sorted(int(r[1]) for r in rows) == [0, 0, 0, 1, 1, 1]


def test_params_canonical(capsys):
    assert run(["params", "--config", "canonical", "--mode", "multi-view"]) == 0
    total = int(capsys.readouterr().out.split("total")[1])
    assert abs(total - 63_330_000) / 63_330_000 < 0.02


def test_unknown_flag_is_rejected(capsys):
    assert run(["params", "--bogus"]) == 1
    assert "--bogus" in capsys.readouterr().err


def test_canonical_training_needs_force(dataset, tmp_path):
    assert run(["train", "--manifest", str(dataset / "d" / "manifest.csv"), "--out", str(tmp_path),
                "--config", "canonical"]) == 1


def test_missing_manifest_is_io_error(tmp_path):
    assert run(["train", "--manifest", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2


def test_corrupt_checkpoint_is_format_error(dataset, tmp_path):
    (tmp_path / "bad.mvck").write_bytes(b"garbage")
    assert run(["eval", "--checkpoint", str(tmp_path / "bad.mvck"),
                "--manifest", str(dataset / "d" / "manifest.csv")]) == 2


def test_train_then_eval(dataset, tmp_path):
    manifest = str(dataset / "d" / "manifest.csv")
    assert run(["train", "--manifest", manifest, "--out", str(tmp_path / "run"), "--epochs", "2",
                "--val-fraction", "0", "--mode", "single-view"]) == 0
    assert (tmp_path / "run" / "history.csv").read_text().startswith("epoch,train_loss,val_loss,lr\n")
    assert run(["eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.mvck"), "--manifest", manifest,
                "--out-json", str(tmp_path / "m.json"), "--out-roc", str(tmp_path / "roc.csv")]) == 0
    report = json.loads((tmp_path / "m.json").read_text())
    assert set(report) >= {"accuracy", "f1", "auc", "roc"}


def test_preprocess(dataset, tmp_path):
    assert run(["preprocess", "--manifest", str(dataset / "d" / "manifest.csv"), "--out", str(tmp_path),
                "--shape", "8x16x16", "--skip-window"]) == 0
    samples = load_samples(tmp_path / "manifest.csv")
    assert len(samples) == 6 and all(s.volume.shape == (8, 16, 16) for s in samples)


@pytest.mark.parametrize("model", ["lr", "knn"])
def test_baseline(dataset, tmp_path, model):
    manifest = str(dataset / "d" / "manifest.csv")
    assert run(["baseline", "--model", model, "--k", "3", "--train-manifest", manifest, "--test-manifest", manifest,
                "--out-json", str(tmp_path / "b.json"), "--out-roc", str(tmp_path / "b.csv")]) == 0
    assert 0.0 <= json.loads((tmp_path / "b.json").read_text())["auc"] <= 1.0


def test_bad_shape_flag():
    assert run(["synth", "--out", "x", "--shape", "16x32"]) == 1


def test_help_lists_defaults():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for action in sp._actions:
            if action.option_strings and action.dest != "help" and not action.required:
                assert action.option_strings[-1] in text
                assert "default" in (action.help or "") or "(default:" in text, (name, action.dest)
    train_help = sub.choices["train"].format_help()
    assert "0.0001" in train_help and "0.99" in train_help and "(default: 60)" in train_help
