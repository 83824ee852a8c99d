"""
End-to-end tests for the command-line front end.
"""
import json

import numpy as np
import pytest

from src.cli import EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, main
from src.config import build_run_config
from src.database import RunRegistry
from src.dataset import BLOB_JITTER, BLOB_SIGMA, blob_centers
from src.exceptions import NumericalError
from src.imageio import read_image
from src.network import build_model, save_model

TINY_RUN = """
model.input_size = 32
train.epochs = 1
train.batch_size = 4
train.val_fraction = 0.5
lime.g = 4
lime.n_samples = 24
augment.target = 32
"""


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("XRAYDPN_DATABASE_URL", raising=False)
    (tmp_path / "run.cfg").write_text(TINY_RUN)
    assert main(["synth", "--out", "data", "--n-per-class", "2", "--seed", "0"]) == EXIT_OK
    return tmp_path


def train(extra=()):
    return main(["train", "--manifest", "data/manifest.tsv", "--config", "run.cfg", "--seed", "5",
                 "--out", "model.dpnse", *extra])


def test_synth_writes_manifest(workspace, capsys):
    """Test synth prints a summary and writes the dataset."""
    assert (workspace / "data" / "manifest.tsv").read_text().count("\n") == 8
    assert (workspace / "data" / "pneumonia-bacterial" / "0001.pgm").is_file()


def test_train_writes_model_sidecar_and_log(workspace, capsys):
    """Test train saves the model, its sidecar and the CSV log."""
    assert train() == EXIT_OK
    assert "saved DPN-SE model to model.dpnse" in capsys.readouterr().out
    sidecar = json.loads((workspace / "model.dpnse.json").read_text())
    assert sidecar["train_seed"] == 5 and sidecar["variant"] == "DPN-SE"
    assert (workspace / "model.dpnse").read_bytes().startswith(b"DPNSE01")
    assert (workspace / "model.csv").read_text().splitlines()[0] == "epoch,loss,acc"


def test_train_requires_seed(workspace):
    """Test training without a seed is an input error."""
    code = main(["train", "--manifest", "data/manifest.tsv", "--config", "run.cfg", "--out", "m.dpnse"])
    assert code == EXIT_INPUT


def test_eval_prints_table_and_writes_json(workspace, capsys):
    """Test eval on the held-out split with a merged-class table."""
    assert train() == EXIT_OK
    capsys.readouterr()
    code = main(["eval", "--model", "model.dpnse", "--manifest", "data/manifest.tsv", "--split", "val",
                 "--json", "report.json", "--merge", "Pneumonia=Pneumonia Bacterial,Pneumonia Viral"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "F-measure" in out and out.count("Overall accuracy") == 2
    doc = json.loads((workspace / "report.json").read_text())
    assert sum(map(sum, doc["metrics"]["confusion"])) == 4
    assert doc["additional_context"]["split"] == "val"


def test_explain_writes_overlay_and_json(workspace, capsys):
    """Test explain writes the overlay image and coefficient JSON."""
    assert train() == EXIT_OK
    code = main(["explain", "--model", "model.dpnse", "--image", "data/covid-19/0000.pgm",
                 "--class", "0", "--config", "run.cfg", "--out", "expl"])
    assert code == EXIT_OK
    assert (workspace / "expl.ppm").read_bytes().startswith(b"P6")
    doc = json.loads((workspace / "expl.json").read_text())
    assert doc["class"] == 0 and len(doc["coefficients"]) == 16
    assert "class 0 (COVID-19)" in capsys.readouterr().out


def test_augment_preview(workspace):
    """Test preview files are written per counter."""
    code = main(["augment-preview", "--image", "data/normal/0000.pgm", "--n", "3", "--config", "run.cfg",
                 "--out", "previews"])
    assert code == EXIT_OK
    assert sorted(p.name for p in (workspace / "previews").iterdir()) == [
        "preview_0000.pgm", "preview_0001.pgm", "preview_0002.pgm"]


def test_run_registry(workspace):
    """Test --db records training and evaluation runs."""
    url = f"sqlite:///{workspace / 'runs.db'}"
    assert train(["--db", url]) == EXIT_OK
    assert main(["eval", "--model", "model.dpnse", "--manifest", "data/manifest.tsv", "--db", url]) == EXIT_OK
    registry = RunRegistry(url)
    runs = registry.training_runs()
    assert len(runs) == 1 and runs[0].seed == "5"
    assert registry.evaluations()[0].training_run_id == runs[0].id


def test_missing_model_is_input_error(workspace):
    """Test a missing model file exits with code 1."""
    assert main(["eval", "--model", "nope.dpnse", "--manifest", "data/manifest.tsv"]) == EXIT_INPUT


def test_bad_config_is_input_error(workspace):
    """Test an invalid config key exits with code 1."""
    (workspace / "bad.cfg").write_text("optimizer.lr = 0.1\n")
    assert main(["train", "--manifest", "data/manifest.tsv", "--config", "bad.cfg", "--seed", "1",
                 "--out", "m.dpnse"]) == EXIT_INPUT


def test_numerical_failure_exit_code(workspace, monkeypatch):
    """Test a diverged run exits with code 2."""
    def diverge(*args, **kwargs):
        raise NumericalError("non-finite loss")

    monkeypatch.setattr("src.cli.train_from_manifest", diverge)
    assert train() == EXIT_NUMERICAL


def test_identity_preview_is_reproducible(workspace):
    """Test an identity augment config writes byte-identical previews on every run."""
    (workspace / "identity.cfg").write_text(
        "augment.target = 32\naugment.flip_prob = 0.0\naugment.rotate_max_deg = 0.0\n"
        "augment.scale_range = [1.0, 1.0]\n"
    )
    for out in ("first", "second"):
        assert main(["augment-preview", "--image", "data/normal/0000.pgm", "--n", "3",
                     "--config", "identity.cfg", "--out", out]) == EXIT_OK
    first = [p.read_bytes() for p in sorted((workspace / "first").iterdir())]
    second = [p.read_bytes() for p in sorted((workspace / "second").iterdir())]
    assert first == second
    assert first[0] == first[1] == first[2]


def test_eval_single_image_manifest(workspace):
    """Test eval over a one-line manifest counts exactly one prediction."""
    assert train() == EXIT_OK
    (workspace / "data" / "one.tsv").write_text("covid-19/0000.pgm\tCOVID-19\n")
    doc_path = workspace / "one.json"
    code = main(["eval", "--model", "model.dpnse", "--manifest", "data/one.tsv", "--split", "all",
                 "--json", str(doc_path)])
    assert code == EXIT_OK
    confusion = json.loads(doc_path.read_text())["metrics"]["confusion"]
    assert sum(map(sum, confusion)) == 1


def test_explain_constant_model_is_degenerate(workspace):
    """Test a model with constant output gives zero coefficients and an untinted overlay."""
    model = build_model(build_run_config({"model.input_size": 32}, seed=0).model, seed=0)
    model.head_weight.data[...] = 0.0
    model.head_bias.data[...] = 0.0
    save_model(model, workspace / "flat.dpnse",
               {"class_names": ["COVID-19", "Normal", "Pneumonia Bacterial", "Pneumonia Viral"]})
    code = main(["explain", "--model", "flat.dpnse", "--image", "data/covid-19/0000.pgm",
                 "--class", "0", "--config", "run.cfg", "--out", "flat"])
    assert code == EXIT_OK
    doc = json.loads((workspace / "flat.json").read_text())
    assert doc["coefficients"] == [0.0] * 16
    assert doc["top_k"] == [] and doc["degenerate"] is True
    pixels = read_image(workspace / "flat.ppm").pixels
    assert np.array_equal(pixels[:, :, 0], pixels[:, :, 1])
    assert np.array_equal(pixels[:, :, 1], pixels[:, :, 2])


@pytest.mark.slow
def test_explain_finds_viral_blob(workspace):
    """Test the top segment for a trained model's viral prediction touches one of the class blobs."""
    assert main(["synth", "--out", "big", "--n-per-class", "50", "--seed", "0"]) == EXIT_OK
    (workspace / "long.cfg").write_text("train.epochs = 30\ntrain.batch_size = 16\n")
    assert main(["train", "--manifest", "big/manifest.tsv", "--config", "long.cfg", "--seed", "0",
                 "--out", "toy.dpnse"]) == EXIT_OK
    assert main(["explain", "--model", "toy.dpnse", "--image", "big/pneumonia-viral/0000.pgm",
                 "--class", "3", "--out", "viral"]) == EXIT_OK
    doc = json.loads((workspace / "viral.json").read_text())
    tile = 64 // 8
    row, col = divmod(doc["top_k"][0], 8)
    radius = BLOB_SIGMA + BLOB_JITTER

    def touches(centre):
        nearest_r = min(max(centre[0], row * tile), row * tile + tile - 1)
        nearest_c = min(max(centre[1], col * tile), col * tile + tile - 1)
        return (nearest_r - centre[0]) ** 2 + (nearest_c - centre[1]) ** 2 <= radius ** 2

    assert any(touches(centre) for centre in blob_centers(3))
