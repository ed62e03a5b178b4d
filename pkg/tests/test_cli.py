"""Command line interface: stagewise execution, output, exit codes."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from mintaudit.cli import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_STAGE_FAILURE, main
from mintaudit.pipeline import DATA_ROOT_ENV


def write_config(path: Path, output_dir: Path, **sections) -> Path:
    payload = {
        "corpus": {"name": "synthetic",
                   "generator": {"num_classes": 3, "per_class": 20, "seed": 5}},
        "split": {"fraction": 0.5, "seed": 1},
        "audited": {"architecture": "paper_cnn", "epochs": 2, "batch_size": 16, "seed": 0},
        "mint": {"layer_index": 7, "epochs": 8, "batch_size": 16, "seed": 0},
        "output_dir": str(output_dir),
    }
    payload.update(sections)
    path.write_text(json.dumps(payload, indent=2))
    return path


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli_experiment")
    config_path = write_config(base / "experiment.json", base / "out")
    return config_path, base / "out"


def test_stage_commands_advance_the_pipeline(experiment, capsys) -> None:
    config_path, _ = experiment

    assert main(["ingest", "--config", str(config_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "corpus=synthetic" in out and "classes=3" in out and "images=60" in out

    assert main(["split", "--config", str(config_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "members=30" in out and "externals=30" in out

    assert main(["train-audited", "--config", str(config_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "checkpoint_id=" in out and "train_accuracy=" in out

    assert main(["extract", "--config", str(config_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "layer_index=7" in out and "vector_len=128" in out and "count=60" in out

    assert main(["train-mint", "--config", str(config_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "classes=3" in out


def test_audit_command_writes_and_reports(experiment, capsys) -> None:
    config_path, output_dir = experiment
    assert main(["audit", "--config", str(config_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "pooled_auc=" in out and "mean_class_auc=" in out
    assert (output_dir / "report.json").exists()


def test_layer_flag_overrides_the_config(experiment, capsys) -> None:
    config_path, _ = experiment
    assert main(["audit", "--config", str(config_path), "--layer", "8"]) == EXIT_OK
    assert "layer_index=8" in capsys.readouterr().out


def test_report_command_prints_stored_results(experiment, capsys) -> None:
    config_path, _ = experiment
    main(["audit", "--config", str(config_path)])
    capsys.readouterr()
    assert main(["report", "--config", str(config_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "pooled:" in out
    assert "class 0:" in out and "class 2:" in out


def test_report_before_audit_is_a_stage_failure(tmp_path, capsys) -> None:
    config_path = write_config(tmp_path / "fresh.json", tmp_path / "empty_out")
    assert main(["report", "--config", str(config_path)]) == EXIT_STAGE_FAILURE
    assert "audit" in capsys.readouterr().err


def test_sweep_command_prints_each_point(experiment, capsys) -> None:
    config_path, output_dir = experiment
    sweep_path = write_config(
        config_path.parent / "sweep.json", output_dir,
        sweep={"axis": "epochs", "values": [1, 2]},
    )
    assert main(["sweep", "--config", str(sweep_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "epochs=1 pooled_auc=" in out and "epochs=2 pooled_auc=" in out
    assert "summary=" in out


def test_sweep_without_axis_is_a_config_error(experiment, capsys) -> None:
    config_path, _ = experiment
    assert main(["sweep", "--config", str(config_path)]) == EXIT_CONFIG_ERROR
    assert "sweep.axis" in capsys.readouterr().err


def test_baselines_command_prints_the_comparison(experiment, capsys) -> None:
    config_path, _ = experiment
    assert main(["baselines", "--config", str(config_path)]) == EXIT_OK
    out = capsys.readouterr().out
    for method in ("yeom_loss", "salem_confidence", "song_mentropy", "mint"):
        assert f"{method}: auc=" in out


def test_missing_config_file_exits_with_config_error(tmp_path, capsys) -> None:
    assert main(["audit", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG_ERROR
    assert "configuration error" in capsys.readouterr().err


def test_invalid_config_value_exits_with_config_error(tmp_path, capsys) -> None:
    config_path = write_config(tmp_path / "bad.json", tmp_path / "out",
                               audited={"architecture": "vgg16"})
    assert main(["audit", "--config", str(config_path)]) == EXIT_CONFIG_ERROR
    assert "vgg16" in capsys.readouterr().err


def test_missing_data_root_exits_with_config_error(tmp_path, capsys, monkeypatch) -> None:
    monkeypatch.delenv(DATA_ROOT_ENV, raising=False)
    config_path = write_config(tmp_path / "cifar.json", tmp_path / "out",
                               corpus={"name": "cifar10"})
    assert main(["audit", "--config", str(config_path)]) == EXIT_CONFIG_ERROR
    assert DATA_ROOT_ENV in capsys.readouterr().err


def test_stage_failure_exits_with_stage_code(tmp_path, capsys) -> None:
    config_path = write_config(
        tmp_path / "toosmall.json", tmp_path / "out",
        corpus={"name": "synthetic", "generator": {"num_classes": 3, "per_class": 2, "seed": 5}},
    )
    assert main(["audit", "--config", str(config_path)]) == EXIT_STAGE_FAILURE
    err = capsys.readouterr().err
    assert "stage 'mint' failed" in err
    assert "partial artifacts kept" in err


def test_unknown_command_exits_like_a_usage_error() -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == EXIT_CONFIG_ERROR


def test_render_writes_plots(experiment, capsys) -> None:
    pytest.importorskip("matplotlib")
    config_path, output_dir = experiment
    main(["audit", "--config", str(config_path)])
    capsys.readouterr()
    assert main(["report", "--config", str(config_path), "--render"]) == EXIT_OK
    assert "plot=" in capsys.readouterr().out
    assert (output_dir / "plots" / "per_class_auc.png").exists()


def test_console_script_is_installed(experiment) -> None:
    config_path, _ = experiment
    proc = subprocess.run(
        ["mintaudit", "ingest", "--config", str(config_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_OK, proc.stderr
    assert "corpus=synthetic" in proc.stdout
