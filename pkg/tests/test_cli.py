import json

import pytest

from manipground import cli, harness
from manipground import tensor as T
from manipground.config import save_config, tiny_config
from manipground.data import read_dataset
from manipground.metrics import MetricReport, compute_report, read_predictions


@pytest.fixture
def cfg_path(tmp_path):
    cfg = tiny_config(n_train=16, n_val=8, n_test=12, total_steps=6, warmup_steps=1, batch_size=4,
                      checkpoint_every=3)
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    return path


def events(capsys):
    return [json.loads(line) for line in capsys.readouterr().err.splitlines() if line.startswith("{")]


def test_train_eval_visualize(cfg_path, tmp_path, capsys):
    run = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(run)]) == 0
    steps = [e for e in events(capsys) if e["event"] == "step"]
    assert [e["step"] for e in steps] == list(range(1, 7))
    assert len((run / "train_log.jsonl").read_text().splitlines()) == 6
    assert (run / "val_report.json").exists()

    ev = tmp_path / "eval"
    assert cli.main(["eval", "--checkpoint", str(run / "checkpoint"), "--out", str(ev)]) == 0
    report = MetricReport.from_grouped(json.loads((ev / "report.json").read_text()))
    recomputed = compute_report(read_predictions(ev / "predictions.jsonl"))
    assert recomputed.to_json() == report.to_json()
    assert (ev / "report.txt").read_text().split()[0] == "AUC"

    vis = tmp_path / "vis"
    ids = ",".join(str(r.sample_id) for r in read_predictions(ev / "predictions.jsonl")[:2])
    assert cli.main(["visualize", "--checkpoint", str(run / "checkpoint"), "--ids", ids, "--out", str(vis)]) == 0
    assert len(list(vis.glob("*.ppm"))) == 2 and len(list(vis.glob("*.txt"))) == 2
    assert cli.main(["visualize", "--checkpoint", str(run / "checkpoint"), "--ids", "999999",
                     "--out", str(vis)]) == 2


def test_resume(cfg_path, tmp_path):
    run = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(run), "--set", "total_steps=6"]) == 0
    assert cli.main(["train", "--resume", "--out", str(run)]) == 0


def test_gen_data_and_eval_on_dataset(cfg_path, tmp_path):
    data = tmp_path / "data"
    assert cli.main(["gen-data", "--config", str(cfg_path), "--count", "12", "--out", str(data)]) == 0
    samples = read_dataset(data)
    assert len(samples) == 12
    run = tmp_path / "run"
    cli.main(["train", "--config", str(cfg_path), "--out", str(run)])
    ev = tmp_path / "ev"
    assert cli.main(["eval", "--checkpoint", str(run / "checkpoint"), "--dataset", str(data),
                     "--out", str(ev)]) == 0
    assert len(read_predictions(ev / "predictions.jsonl")) == 12


def test_eval_rejects_mismatched_dataset(cfg_path, tmp_path):
    data = tmp_path / "data"
    cli.main(["gen-data", "--count", "3", "--out", str(data)])  # default 32x32 images
    run = tmp_path / "run"
    cli.main(["train", "--config", str(cfg_path), "--out", str(run)])
    assert cli.main(["eval", "--checkpoint", str(run / "checkpoint"), "--dataset", str(data),
                     "--out", str(tmp_path / "ev")]) == 2


def test_grad_check_exit_codes(monkeypatch, capsys):
    assert cli.main(["grad-check"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["passed"] and summary["max_rel_err"] < 1e-4
    original = T.gelu_grad
    monkeypatch.setattr(T, "gelu_grad", lambda x, cdf=None: 1.1 * original(x, cdf))
    assert cli.main(["grad-check"]) == 1


def test_ablate(cfg_path, tmp_path, capsys):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--config", str(cfg_path), "--variants", "full,baseline", "--seeds", "0",
                     "--set", "total_steps=2", "--out", str(out)]) == 0
    assert capsys.readouterr().out.splitlines()[0].split()[0] == "Method"
    assert cli.main(["ablate", "--config", str(cfg_path), "--variants", "nope", "--out", str(out)]) == 2


def test_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"unknown_key": 1}')
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "r")]) == 2


def test_env_default_out(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["gen-data", "--config", str(cfg_path), "--count", "2"]) == 0
    assert (tmp_path / "envout" / "manifest.jsonl").exists()


def test_divergence_exit_code(cfg_path, tmp_path, monkeypatch):
    def boom(self):
        raise harness.TrainingDiverged("non-finite loss nan at step 1")
    monkeypatch.setattr(harness.Trainer, "train_step", boom)
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r")]) == 3
