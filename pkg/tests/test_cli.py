import json

import pytest

from synfire_bp import cli, harness


def _run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture
def common(synthetic_mnist):
    return ["--data-dir", synthetic_mnist, "--dims", "400,12,10"]


def test_train_writes_checkpoint_and_metrics(common, tmp_path, capsys):
    out = tmp_path / "run"
    assert _run("train", *common, "--epochs", 2, "--output-dir", out) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert len(m["accuracy"]) == 2 and len(m["mse"]) == 2
    ck = harness.Checkpoint.load(out / "checkpoint.bin")
    assert ck.dims == (400, 12, 10) and ck.epoch == 2
    assert "epoch 2" in capsys.readouterr().out


def test_train_is_byte_deterministic(common, tmp_path):
    for d in ("a", "b"):
        assert _run("train", *common, "--mode", "snn", "--output-dir", tmp_path / d) == 0
    for name in ("checkpoint.bin", "metrics.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_overridden_by_flags(common, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 3\nseed = 4\n")
    assert _run("train", *common, "--config", cfg, "--epochs", 1, "--output-dir", tmp_path / "o") == 0
    ck = harness.Checkpoint.load(tmp_path / "o" / "checkpoint.bin")
    assert (ck.epoch, ck.seed) == (1, 4)


def test_eval_prints_accuracy_and_confusion(common, tmp_path, capsys):
    _run("train", *common, "--output-dir", tmp_path)
    capsys.readouterr()
    assert _run("eval", *common, "--checkpoint", tmp_path / "checkpoint.bin") == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy ") and "confusion" in out
    assert len([l for l in out.splitlines() if l[:2].strip().isdigit()]) == 10


def test_lockstep_clean_exit_zero(common, capsys):
    assert _run("lockstep", *common, "--samples", 30) == 0
    assert "clean pass over 30" in capsys.readouterr().out


def test_lockstep_mode_train(common, tmp_path):
    assert _run("train", *common, "--mode", "lockstep", "--output-dir", tmp_path) == 0


def test_trace_export(common, tmp_path):
    out = tmp_path / "t.csv"
    assert _run("trace", *common, "--sample-ids", "0,3", "--out", out, "--trace-verbosity", 1) == 0
    rows = harness.read_trace(out)
    assert {r[0] for r in rows} == {0, 1}
    assert any(r[2] == "g1" for r in rows)
    assert out.read_text().splitlines()[0] == "frame,step,layer_name,neuron_index"


def test_export_net(common, tmp_path, capsys):
    assert _run("export-net", *common, "--weights", tmp_path / "w.txt") == 0
    assert "[schedule]" in capsys.readouterr().out
    assert (tmp_path / "w.txt").read_text().startswith("# checkpoint v1 dims 400 12 10")
    assert _run("export-net", *common, "--inference-only", "on", "--out", tmp_path / "n.txt") == 0
    assert "period 4" in (tmp_path / "n.txt").read_text()


def test_errors_give_nonzero_exit(common, tmp_path, capsys):
    assert _run("eval", *common, "--checkpoint", tmp_path / "missing.bin") == 1
    assert _run("train", "--data-dir", tmp_path / "nowhere", "--dims", "400,12,10") == 1
    assert _run("train", *common[:2], "--dims", "784,12,10") == 1
    assert "error:" in capsys.readouterr().err
