import json
import subprocess
import sys

import pytest

from gtea.cli import main


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(d), "--seed", "7"]) == 0
    return d


def data_args(d):
    return ["--nodes", str(d / "nodes.csv"), "--events", str(d / "events.csv")]


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", *data_args(data), "--out", str(out), "--seed", "1",
                 "--epochs", "40", "--patience", "40", "--quiet"])
    assert code == 0
    return out


def test_synth_outputs(data):
    lines = (data / "nodes.csv").read_text().splitlines()
    assert len(lines) == 65
    assert lines[0].startswith("node_id,label,feat_0")
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["spec"]["num_nodes"] == 64
    assert (data / "labels.csv").read_text().count("\n") == 65


def test_synth_is_byte_identical(data, tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--seed", "7"]) == 0
    for name in ("nodes.csv", "events.csv", "labels.csv", "manifest.json"):
        assert (tmp_path / name).read_bytes() == (data / name).read_bytes()


def test_synth_flags_override_config(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[synth]\nnum_nodes = 40\nseed = 3\n")
    assert main(["synth", "--config", str(cfg), "--num-nodes", "32", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["spec"]["num_nodes"] == 32 and manifest["seed"] == 3


def test_train_writes_reports(trained):
    metrics = json.loads((trained / "metrics.json").read_text())
    assert "accuracy" in metrics["test"]
    assert metrics["history"][0]["epoch"] == 1
    assert {"train_loss", "val_loss", "val_accuracy", "val_macro_f1"} <= set(metrics["history"][0])
    config = json.loads((trained / "config.json").read_text())
    assert config["train"]["seed"] == 1 and config["train"]["epochs"] == 40
    assert (trained / "model.npz").is_file()


def test_train_same_seed_same_metrics(data, tmp_path):
    args = ["train", *data_args(data), "--seed", "1", "--epochs", "3", "--quiet"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/metrics.json").read_bytes() == (tmp_path / "b/metrics.json").read_bytes()


def test_bad_variant_lists_choices(data, tmp_path, capsys):
    assert main(["train", *data_args(data), "--variant", "gru", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "lstm+t2v" in err and "transformer" in err


def test_unknown_config_key_rejected(data, tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[train]\nlearning_rate = 0.1\n")
    assert main(["train", *data_args(data), "--config", str(cfg)]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_eval_train_split_of_overfit_model(data, trained, tmp_path):
    args = ["eval", *data_args(data), "--checkpoint", str(trained / "model.npz"), "--split", "train"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    report = json.loads((tmp_path / "a/eval_metrics.json").read_text())
    assert report["accuracy"] == 1.0
    assert (tmp_path / "a/eval_metrics.json").read_bytes() == (tmp_path / "b/eval_metrics.json").read_bytes()


def test_eval_missing_checkpoint_is_usage_error(data, tmp_path):
    assert main(["eval", *data_args(data), "--out", str(tmp_path)]) == 1


def test_eval_dimension_mismatch(trained, tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--node-dim", "5"]) == 0
    code = main(["eval", *data_args(tmp_path), "--checkpoint", str(trained / "model.npz"), "--out", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "node_dim" in err and "dataset has 5" in err and "expects 8" in err


def test_embed_rows_and_symmetry(data, trained, tmp_path):
    u, v = (data / "events.csv").read_text().splitlines()[1].split(",")[:2]
    args = ["embed", *data_args(data), "--checkpoint", str(trained / "model.npz"),
            "--node-ids", "0,1,2,3,4", "--edge-pairs", f"{u}-{v},{v}-{u}"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    nodes = (tmp_path / "a/node_embeddings.csv").read_text().splitlines()
    assert len(nodes) == 6
    assert len(nodes[1].split(",")) == 1 + 2  # id + final layer width (num classes)
    edges = (tmp_path / "a/edge_embeddings.csv").read_text().splitlines()
    assert edges[1].split(",")[2:] == edges[2].split(",")[2:]
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("node_embeddings.csv", "edge_embeddings.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_embed_unknown_node_is_data_error(data, trained, tmp_path):
    code = main(["embed", *data_args(data), "--checkpoint", str(trained / "model.npz"),
                 "--node-ids", "999", "--out", str(tmp_path)])
    assert code == 2


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "gtea", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth" in proc.stdout and "embed" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "gtea"], capture_output=True, text=True)
    assert proc.returncode == 1
