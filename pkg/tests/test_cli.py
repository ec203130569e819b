import hashlib
import json
import os

import pytest

from snapgraph import cli


def run(args):
    return cli.main([str(a) for a in args])


def _checksums(directory):
    out = {}
    for root, _, files in os.walk(directory):
        for name in files:
            path = os.path.join(root, name)
            rel = os.path.relpath(path, directory)
            out[rel] = hashlib.sha256(open(path, "rb").read()).hexdigest()
    return out


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert run(
        ["generate", "--data-dir", d, "--nodes", 70, "--months", 12, "--seed", 5]
    ) == 0
    return d


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(
            ["generate", "--data-dir", d, "--nodes", 40, "--months", 6, "--seed", 9]
        ) == 0
    assert _checksums(a) == _checksums(b)
    assert {"events.csv", "nodes.csv", "generation.json"} <= set(os.listdir(a))


def test_stats_outputs(data_dir, capsys):
    assert run(["stats", "--data-dir", data_dir]) == 0
    printed = capsys.readouterr().out
    assert "novelty=" in printed and "surprise=" in printed
    tea = (data_dir / "tea.csv").read_text().splitlines()
    assert tea[0] == "month,novel,reoccurring"
    assert len(tea) == 1 + 12
    assert (data_dir / "tet.csv").exists()
    assert (data_dir / "indices.csv").read_text().startswith(
        "novelty,reoccurrence,surprise\n"
    )


def test_stats_missing_data_is_runtime_error(tmp_path, capsys):
    assert run(["stats", "--data-dir", tmp_path / "nowhere"]) == 1
    assert "error:" in capsys.readouterr().err


def test_invalid_arch_is_usage_error(data_dir, tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(["train", "--data-dir", data_dir, "--run-dir", tmp_path / "r",
             "--arch", "resnet"])
    assert exc.value.code == 2


def test_train_model_run_directory(data_dir, tmp_path):
    run_dir = tmp_path / "run"
    assert run(
        ["train", "--data-dir", data_dir, "--run-dir", run_dir, "--arch", "roland",
         "--hidden-dim", 6, "--max-epochs", 2, "--neg-ratio", 1, "--seed", 3]
    ) == 0
    assert {"config.json", "metrics.csv", "best.ckpt"} <= set(os.listdir(run_dir))
    config = json.loads((run_dir / "config.json").read_text())
    assert config["architecture"] == "roland"
    assert "norm_stats" in config
    metrics = (run_dir / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "epoch,train_loss,val_mae"
    assert len(metrics) == 3


def test_train_baseline_run_without_checkpoint(data_dir, tmp_path):
    run_dir = tmp_path / "rb"
    assert run(
        ["train", "--data-dir", data_dir, "--run-dir", run_dir,
         "--arch", "redgebank", "--window", 4]
    ) == 0
    config = json.loads((run_dir / "config.json").read_text())
    assert config["window"] == 4
    assert not (run_dir / "best.ckpt").exists()


def test_train_baseline_tunes_window_when_omitted(data_dir, tmp_path):
    run_dir = tmp_path / "rb"
    assert run(
        ["train", "--data-dir", data_dir, "--run-dir", run_dir, "--arch", "redgebank"]
    ) == 0
    config = json.loads((run_dir / "config.json").read_text())
    assert 1 <= config["window"] <= 6


def test_evaluate_reports_comparison_and_strata(data_dir, tmp_path, capsys):
    runs = tmp_path / "runs"
    model_dir, rb_dir = runs / "gcrn", runs / "rb"
    run(["train", "--data-dir", data_dir, "--run-dir", model_dir, "--arch", "gcrn",
         "--hidden-dim", 4, "--max-epochs", 1, "--neg-ratio", 1, "--seed", 2])
    run(["train", "--data-dir", data_dir, "--run-dir", rb_dir,
         "--arch", "redgebank", "--window", 4])
    assert run(
        ["evaluate", "--data-dir", data_dir, "--run-dir", model_dir,
         "--run-dir", rb_dir, "--by", "gender", "--by", "age", "--by", "month",
         "--neg-ratio", 1, "--seed", 7]
    ) == 0
    for d in (model_dir, rb_dir):
        present = set(os.listdir(d))
        assert {"summary.csv", "ave.csv", "per_month.csv", "by_gender.csv",
                "by_age.csv"} <= present
    comparison = (runs / "comparison.csv").read_text().splitlines()
    assert comparison[0].startswith("model,channel,positive")
    assert len(comparison) == 1 + 4  # 2 models x 2 channels
    rb_rows = [l for l in comparison if l.startswith("redgebank,")]
    assert all(",0.0," in r for r in rb_rows)  # exact zero on random negatives
    model_rows = [l for l in comparison if l.startswith("gcrn,")]
    assert all(r.split(",")[-1] != "" for r in model_rows)  # p-value present

    # rerunning evaluate is byte-identical
    before = _checksums(runs)
    run(["evaluate", "--data-dir", data_dir, "--run-dir", model_dir,
         "--run-dir", rb_dir, "--by", "gender", "--by", "age", "--by", "month",
         "--neg-ratio", 1, "--seed", 7])
    assert _checksums(runs) == before


def test_evaluate_without_strata_flags_skips_tables(data_dir, tmp_path):
    run_dir = tmp_path / "rb"
    run(["train", "--data-dir", data_dir, "--run-dir", run_dir,
         "--arch", "redgebank", "--window", 2])
    assert run(
        ["evaluate", "--data-dir", data_dir, "--run-dir", run_dir, "--neg-ratio", 1]
    ) == 0
    present = set(os.listdir(run_dir))
    assert "summary.csv" in present and "ave.csv" in present
    assert "per_month.csv" not in present and "by_gender.csv" not in present
    assert (run_dir / "comparison.csv").exists()


def test_config_file_defaults_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nodes": 30, "months": 6, "seed": 4}))
    d1 = tmp_path / "d1"
    assert run(["generate", "--data-dir", d1, "--config", cfg]) == 0
    d2 = tmp_path / "d2"
    assert run(["generate", "--data-dir", d2, "--nodes", 30, "--months", 6,
                "--seed", 4]) == 0
    assert _checksums(d1) == _checksums(d2)
    # an explicit flag wins over the config file
    d3 = tmp_path / "d3"
    assert run(["generate", "--data-dir", d3, "--config", cfg, "--seed", 8]) == 0
    assert _checksums(d3) != _checksums(d1)


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"speed": 11}))
    with pytest.raises(SystemExit) as exc:
        run(["generate", "--data-dir", tmp_path / "d", "--config", cfg])
    assert exc.value.code == 2
