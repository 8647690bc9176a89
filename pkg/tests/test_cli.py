import filecmp
import json
import subprocess
import sys

import pytest

from phasepos.cli import build_parser, main


def micro_config(tmp_path, seed=5, **overrides):
    """A complete pipeline config small enough to run in seconds."""
    doc = {
        "seed": seed,
        "output_dir": str(tmp_path / "run"),
        "frequencies": [800e6],
        "powers_dbm": [0.0],
        "scenario": {"ap_count": 6, "area_side": 6.0},
        "hyper": {"A": 4, "B": 4, "C": 4, "D": 4},
        "train": {"epochs": 6, "batch_size": 16, "learning_rate": 1e-3,
                  "prune_start_epoch": 1, "prune_end_epoch": 4},
        "train_size": 48,
        "val_size": 16,
        "test_size": 16,
        "sparsities": {"mlp": {"800000000": 0.0},
                       "ae": {"800000000": 0.0},
                       "cnn": {"800000000": 0.5}},
        "performance_grids": {"800000000": 49},
        "max_mle_samples": 4,
        "checkpoint_every": 3,
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path, doc


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_unknown_config_key_is_exit_2(tmp_path, capsys):
    path, _ = micro_config(tmp_path, nonsense=1)
    assert main(["scenario", "--config", str(path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_is_exit_2(tmp_path):
    assert main(["scenario", "--config", str(tmp_path / "nope.json")]) == 2


def test_train_before_simulate_is_exit_3(tmp_path, capsys):
    path, _ = micro_config(tmp_path)
    assert main(["scenario", "--config", str(path)]) == 0
    assert main(["train", "--config", str(path)]) == 3
    assert "missing dataset" in capsys.readouterr().err


def test_export_missing_dataset_is_exit_3(tmp_path):
    path, _ = micro_config(tmp_path)
    assert main(["export", "--config", str(path),
                 "--dataset", str(tmp_path / "ghost.bin")]) == 3


def test_bad_model_filter_is_exit_2(tmp_path):
    path, _ = micro_config(tmp_path)
    with pytest.raises(SystemExit):  # argparse rejects the choice itself
        main(["train", "--config", str(path), "--model", "transformer"])


def test_console_entry_point(tmp_path):
    path, _ = micro_config(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "phasepos", "scenario", "--config", str(path)],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "scenario f800mhz" in proc.stdout


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("micro")
    path, doc = micro_config(tmp)
    assert main(["simulate", "--config", str(path)]) == 0
    assert main(["train", "--config", str(path)]) == 0
    assert main(["bench", "--config", str(path)]) == 0
    return tmp, path, doc


def test_micro_pipeline_artifacts(micro_run):
    tmp, path, doc = micro_run
    run = tmp / "run"
    assert (run / "scenarios" / "f800mhz.json").exists()
    for split in ("train", "val", "test"):
        assert (run / "datasets" / f"f800mhz_p0dbm_{split}.bin").exists()
    assert (run / "models" / "mlp_f800mhz_p0dbm.weights").exists()
    assert (run / "models" / "ae_f800mhz_p0dbm.weights").exists()
    assert (run / "models" / "cnn_f800mhz_p0dbm" / "bundle.json").exists()
    reports = json.loads((run / "reports" / "bench_f800mhz.json").read_text())
    methods = {r["method"] for r in reports}
    assert {"mlp", "cnn_estimated", "cnn_oracle", "mle_matched_mlp",
            "mle_matched_cnn", "mle_full"} <= methods
    assert (run / "reports" / "rmse_vs_power_f800mhz.csv").exists()
    assert (run / "reports" / "ecdf_0dbm_f800mhz.csv").exists()


def test_micro_pipeline_export_roundtrip(micro_run):
    tmp, path, doc = micro_run
    ds = tmp / "run" / "datasets" / "f800mhz_p0dbm_test.bin"
    out = tmp / "dump.csv"
    assert main(["export", "--config", str(path),
                 "--dataset", str(ds), "--out", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert len(lines) == doc["test_size"] + 1


def test_micro_pipeline_is_deterministic(micro_run, tmp_path):
    tmp, _, doc = micro_run
    path2, _ = micro_config(tmp_path, output_dir=str(tmp_path / "run"))
    assert main(["simulate", "--config", str(path2)]) == 0
    assert main(["train", "--config", str(path2)]) == 0
    a, b = tmp / "run", tmp_path / "run"
    for rel in ("datasets/f800mhz_p0dbm_train.bin",
                "datasets/f800mhz_p0dbm_test.bin",
                "models/mlp_f800mhz_p0dbm.weights",
                "models/ae_f800mhz_p0dbm.weights",
                "models/cnn_f800mhz_p0dbm/positioner.weights",
                "models/cnn_f800mhz_p0dbm/estimator.weights"):
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


def test_cli_resume_reproduces_final_weights(micro_run, tmp_path):
    tmp, _, doc = micro_run
    path2, _ = micro_config(tmp_path, output_dir=str(tmp_path / "resume"))
    assert main(["simulate", "--config", str(path2)]) == 0
    assert main(["train", "--config", str(path2), "--model", "mlp"]) == 0
    run = tmp_path / "resume"
    final = run / "models" / "mlp_f800mhz_p0dbm.weights"
    reference = final.read_bytes()
    final.unlink()
    # checkpoint (cadence 3, epochs 6) stays behind -> resume, not retrain
    assert (run / "checkpoints" / "mlp_f800mhz_p0dbm.ckpt").exists()
    assert main(["train", "--config", str(path2), "--model", "mlp"]) == 0
    assert final.read_bytes() == reference


def test_seed_flag_changes_artifacts(micro_run, tmp_path):
    tmp, _, doc = micro_run
    path2, _ = micro_config(tmp_path, output_dir=str(tmp_path / "run"),
                            seed=6)
    assert main(["simulate", "--config", str(path2)]) == 0
    a = (tmp / "run" / "datasets" / "f800mhz_p0dbm_train.bin").read_bytes()
    b = (tmp_path / "run" / "datasets" / "f800mhz_p0dbm_train.bin").read_bytes()
    assert a != b


def test_env_output_dir_override(tmp_path, monkeypatch):
    path, _ = micro_config(tmp_path)
    alt = tmp_path / "env_run"
    monkeypatch.setenv("PHASEPOS_OUTPUT_DIR", str(alt))
    assert main(["scenario", "--config", str(path)]) == 0
    assert (alt / "scenarios" / "f800mhz.json").exists()
