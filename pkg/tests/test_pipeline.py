import copy
import hashlib
import json
from pathlib import Path

import pytest

from delaywatch.cli import main
from delaywatch.errors import SchemaError
from delaywatch.pipeline import (
    STAGE_ORDER,
    RunContext,
    read_json,
    run_experiment,
    run_stage,
    validate_config,
)

MINI = {
    "seed": 7,
    "design": {"registers": 18, "combinational_gates": 160, "max_logic_depth": 5,
               "path_cap_per_endpoint": 24},
    "lot": {"n_dies": 12},
    "binning": {"bins": 3, "probe_paths": 6},
    "trojans": {"tp_counts": {"Small": 0, "Medium": 2, "Large": 0},
                "tt_counts": {"Small": 1, "Medium": 0, "Large": 0},
                "min_tested_paths": 1, "max_paths_per_net": 14},
    "train": {"m_per_endpoint": 10, "epochs": 25, "batch_size": 32, "patience": 8,
              "hidden": [25]},
    "cfst": {"tester_min_delay_ps": 120.0},
}


def tree_hash(root: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(root).iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("mini")
    run_experiment(copy.deepcopy(MINI), out)
    return out


def test_schema_missing_seed():
    with pytest.raises(SchemaError) as err:
        validate_config({"design": {"registers": 10}})
    assert err.value.field == "seed"


def test_schema_unknown_field_and_bad_values():
    with pytest.raises(SchemaError) as err:
        validate_config({"seed": 1, "nonsense": {}})
    assert err.value.field == "nonsense"
    with pytest.raises(SchemaError) as err:
        validate_config({"seed": 1, "design": {"registers": 1}})
    assert err.value.field == "design.registers"
    with pytest.raises(SchemaError) as err:
        validate_config({"seed": 1, "train": {"splits": [0.5, 0.4, 0.2]}})
    assert err.value.field == "train.splits"


def test_minimal_no_trojan_run(tmp_path):
    cfg = copy.deepcopy(MINI)
    cfg["trojans"]["tp_counts"] = {}
    cfg["trojans"]["tt_counts"] = {}
    cfg["lot"]["n_dies"] = 10
    out = run_experiment(cfg, tmp_path / "clean")
    m = read_json(out / "metrics.json")
    assert m["counts"]["trojan_paths"] == 0
    for mode_doc in m["modes"].values():
        assert mode_doc["aggregate"]["tpo"] is None  # rendered as N/A
        assert mode_doc["aggregate"]["fpo"] is not None
    assert "N/A" in (out / "report.txt").read_text()
    y = read_json(out / "youden.json")
    assert all(e["status"] == "single_class"
               for per_bin in y["modes"].values() for e in per_bin.values())


def test_full_run_artifacts_present(mini_run):
    expected = ["design.json", "gtm_global.csv", "gtm_pathspec.csv", "candidates.json",
                "trojans.json", "lot.json", "measured_slack.npy", "bins.json",
                "mean_slack.csv", "dataset_Typical.csv", "model_Typical.json",
                "watchdog_stats.json", "detection_ngtm.json", "youden.json",
                "metrics.json", "report.txt", "raw_delays.csv.gz",
                "measurements.csv.gz", "power_candidates.csv"]
    for name in expected:
        assert (mini_run / name).exists(), name


def test_bins_partition_lot(mini_run):
    bins = read_json(mini_run / "bins.json")["bins"]
    all_dies = [d for b in bins for d in b["die_ids"]]
    assert len(all_dies) == len(set(all_dies)) == 12


def test_rerun_is_hash_identical(mini_run, tmp_path):
    out2 = run_experiment(copy.deepcopy(MINI), tmp_path / "again")
    assert tree_hash(mini_run) == tree_hash(out2)


def test_staged_cli_matches_monolithic(mini_run, tmp_path):
    out = tmp_path / "staged"
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(MINI))
    for stage in STAGE_ORDER:
        rc = main([stage, "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0, stage
    a, b = tree_hash(mini_run), tree_hash(out)
    assert a == b


def test_resume_skips_current_stages(mini_run):
    ctx = RunContext(mini_run, read_json(mini_run / "resolved_config.json"))
    for stage in STAGE_ORDER:
        assert run_stage(ctx, stage, resume=True) is False


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"design": {"registers": 10}}))  # no seed
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "y")]) == 2


def test_cli_roc_single_class_exit_2(tmp_path, capsys):
    cfg = copy.deepcopy(MINI)
    cfg["trojans"]["tp_counts"] = {}
    cfg["trojans"]["tt_counts"] = {}
    cfg["lot"]["n_dies"] = 10
    out = tmp_path / "noclass"
    run_experiment(cfg, out)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["roc", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 2


def test_cli_seed_override(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(MINI))
    out = tmp_path / "seeded"
    assert main(["gen", "--config", str(cfg_path), "--seed", "99",
                 "--out", str(out)]) == 0
    assert read_json(out / "resolved_config.json")["seed"] == 99


def test_mode_restriction(tmp_path):
    cfg = copy.deepcopy(MINI)
    out = tmp_path / "one_mode"
    run_experiment(cfg, out, only_mode="ngtm")
    assert (out / "detection_ngtm.json").exists()
    assert not (out / "detection_ssta.json").exists()


def test_sweep_stage_writes_log_and_best(mini_run, tmp_path):
    import csv
    import shutil

    out = tmp_path / "sweep"
    shutil.copytree(mini_run, out)
    cfg = copy.deepcopy(MINI)
    cfg["train"]["search"] = {"layers": [1], "widths": [25, 26],
                              "activations": ["relu"]}
    ctx = RunContext(out, validate_config(cfg))
    run_stage(ctx, "sweep")
    with (out / "sweep_log.csv").open() as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    best = read_json(out / "sweep_best.json")
    assert best["hidden"][0] in (25, 26)
    assert float(min(r["val_mse"] for r in rows)) <= float(max(r["val_mse"] for r in rows))


def test_measurement_csv_schema(mini_run):
    import gzip

    import pandas as pd
    with gzip.open(mini_run / "measurements.csv.gz", "rt") as f:
        df = pd.read_csv(f)
    assert list(df.columns) == ["die_id", "path_id", "measured_delay_ps",
                                "measured_slack_ps"]
    with gzip.open(mini_run / "raw_delays.csv.gz", "rt") as f:
        raw = pd.read_csv(f)
    assert list(raw.columns) == ["die_id", "path_id", "trial", "true_delay_ps"]
    # quantization is conservative wherever the measurement succeeded
    ok = df["measured_delay_ps"].notna()
    merged = df[ok].merge(raw, on=["die_id", "path_id"])
    assert (merged["measured_delay_ps"] >= merged["true_delay_ps"] - 1e-9).all()
