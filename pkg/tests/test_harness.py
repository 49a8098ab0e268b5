import csv
import json

import numpy as np
import pytest

from snnattack.harness import cli
from snnattack.harness.campaign import run_campaign, select_samples
from snnattack.harness.config import AttackGrid, DatasetSpec, ExperimentConfig
from snnattack.harness.datasets import load_split
from snnattack.store import load_model, load_outcome, save_outcome

SYNTH = ["--dataset", "synthetic"]
TRAIN = [*SYNTH, "--network", "Input-16FC-2FC", "--T", "8"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    path = root / "m.snnm"
    code = cli.main(["train", *TRAIN, "--epochs", "3", "--lr", "0.5", "--out", str(path)])
    assert code == 0
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_reaches_accuracy(trained):
    m = load_model(trained)
    assert m.meta["test_accuracy"] >= 0.95
    log = json.loads(trained.with_name(trained.name + ".log.json").read_text())
    assert len(log["history"]) == 3


def test_zero_epochs_is_chance(tmp_path):
    path = tmp_path / "z.snnm"
    assert cli.main(["train", *TRAIN, "--epochs", "0", "--out", str(path)]) == 0
    assert abs(load_model(path).meta["test_accuracy"] - 0.5) <= 0.25


def test_missing_dataset_is_io_error(tmp_path, capsys):
    code = cli.main(["train", "--data-path", str(tmp_path / "nope"), "--out", str(tmp_path / "m.snnm")])
    assert code == cli.EXIT_IO
    assert "not found" in capsys.readouterr().err


def test_grid_row_count(trained, tmp_path):
    out = tmp_path / "grid"
    code = cli.main(["attack", *SYNTH, "--model", str(trained), "--out", str(out),
                     "--mode", "untargeted", "targeted", "--gamma", "0.01", "0.05", "--epsilon", "inf", "0.2",
                     "--override-threshold", "none", "0.6", "--samples-per-class", "3",
                     "--targeted-per-class", "1", "--iter", "5"])
    assert code == 0
    rows = read_csv(out / "report.csv")
    assert len(rows) == 2 * 2 * 2 * 2
    assert (out / "report.json").exists() and (out / "accuracy_loss.csv").exists()


def test_tiny_budget_gives_no_successes(trained, tmp_path):
    out = tmp_path / "tiny"
    assert cli.main(["attack", *SYNTH, "--model", str(trained), "--out", str(out), "--epsilon", "1e-9",
                     "--iter", "1", "--samples-per-class", "5"]) == 0
    assert float(read_csv(out / "report.csv")[0]["success_rate"]) == 0.0


def test_empty_grid_is_config_error(trained, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"attack": {"gammas": []}}))
    code = cli.main(["attack", *SYNTH, "--config", str(cfg), "--model", str(trained), "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    assert "empty" in capsys.readouterr().err


def test_override_at_training_value_matches_plain(trained):
    model = load_model(trained)
    split = load_split(DatasetSpec(kind="synthetic"), "test", model.T)
    grid = AttackGrid(overrides=[None, 0.3], samples_per_class=4, max_iter=10)
    rows = run_campaign(model, split, grid)["cells"]
    keys = ["successes", "mean_perturbation_success", "mean_iterations", "mean_flip_iterations"]
    assert [rows[0][k] for k in keys] == [rows[1][k] for k in keys]


def test_selection_excludes_misclassified(trained):
    model = load_model(trained)
    split = load_split(DatasetSpec(kind="synthetic"), "test", model.T)
    # flip half the labels so some samples are certainly misclassified
    y = split.y.copy()
    y[::2] = 1 - y[::2]
    split.y = y
    sel = select_samples(model, split, 5, seed=0)
    assert sel.excluded > 0
    assert len(sel.indices) == 10
    assert 0 < sel.clean_accuracy < 1


def test_campaign_csv_is_deterministic(trained, tmp_path):
    args = ["attack", *SYNTH, "--model", str(trained), "--samples-per-class", "4", "--iter", "8",
            "--gamma", "0.05", "0.2"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_parallel_matches_serial(trained, tmp_path):
    args = ["attack", *SYNTH, "--model", str(trained), "--samples-per-class", "3", "--iter", "6"]
    assert cli.main([*args, "--out", str(tmp_path / "s")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "p"), "--workers", "2"]) == 0
    assert (tmp_path / "s" / "report.csv").read_bytes() == (tmp_path / "p" / "report.csv").read_bytes()


def test_sweep_writes_tables(trained, tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["sweep", *SYNTH, "--model", str(trained), "--out", str(out), "--gamma", "0.01", "0.2",
                     "--samples-per-class", "2", "--iter", "4"]) == 0
    assert len(read_csv(out / "sweep_gamma.csv")) == 2
    assert (out / "sweep_threshold.csv").exists()


def test_report_empty_dir(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path)]) == 0
    assert "no outcomes" in capsys.readouterr().out


def test_report_rates_and_tamper_flag(trained, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["attack", *SYNTH, "--model", str(trained), "--out", str(out), "--samples-per-class", "1",
                     "--iter", "25", "--save-outcomes"]) == 0
    odir = out / "outcomes"
    metas = sorted(odir.glob("*.json"))
    successes = [m for m in metas if load_outcome(m)[0].success]
    assert successes, "need at least one successful attack for this check"
    for extra in metas:
        if extra not in successes[:1]:
            extra.unlink()
            for suffix in (".bin", ".orig.bin"):
                blob = extra.with_name(extra.name[:-5] + suffix)
                if blob.exists():
                    blob.unlink()
    good, doc = load_outcome(successes[0])
    failed = type(good)("failed_budget", 3, 0.9, 0, good.adversarial_example, good.true_label, good.config)
    save_outcome(failed, odir / "failed", extra={"cell": doc["cell"], "model": doc["model"]})

    assert cli.main(["report", str(odir)]) == 0
    rows = read_csv(odir / "summary.csv")
    assert len(rows) == 1
    assert float(rows[0]["success_rate"]) == 0.5
    assert rows[0]["flagged"] == "0"

    # revert the adversarial example to the clean input: the success no longer re-verifies
    blob = odir / doc["example"]["file"]
    blob.write_bytes((odir / doc["example"]["original"]).read_bytes())
    cli.main(["report", str(odir)])
    printed = capsys.readouterr().out
    assert "FLAG" in printed
    assert read_csv(odir / "summary.csv")[0]["flagged"] == "1"


def test_config_roundtrip_and_unknown_keys(tmp_path):
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    from snnattack.errors import ConfigurationError
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"train": {"nope": 2}})
