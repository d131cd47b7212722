import json
import shutil
import subprocess

import numpy as np
import pytest

from gridstate.errors import ConfigError, StageError
from gridstate.pipeline import (ExperimentConfig, config_from_identity,
                                load_config, run_experiment, run_hash,
                                evaluation_measurements)

SMALL_TOML = """\
[experiment]
name = "{name}"
seed = 19
output_dir = "{out}"

[profile]
hours = 168

[training]
n_learners = 2
epochs = 3
batch_size = 16
"""


def write_small_config(tmp_path, name="small", subdir="run"):
    path = tmp_path / f"{name}.toml"
    path.write_text(SMALL_TOML.format(name=name, out=tmp_path / subdir))
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    config = load_config(write_small_config(tmp))
    return run_experiment(config), tmp


def test_load_config_defaults_and_overrides(tmp_path):
    config = load_config(write_small_config(tmp_path))
    assert config.name == "small"
    assert config.seed == 19
    assert config.case_source == "ieee14"
    assert config.plan_source == "minimal14"
    assert config.profile_hours == 168
    assert config.epochs == 3
    assert config.n_learners == 2
    assert config.test_snr_db == 20.0


def test_config_validation_messages(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[experiment]\nname = 'x'\nseed = 1\n[mystery]\nfoo = 1\n")
    with pytest.raises(ConfigError, match=r"unknown section \[mystery\]"):
        load_config(bad)
    bad.write_text("[experiment]\nname = 'x'\nseed = 1\ncolor = 'red'\n")
    with pytest.raises(ConfigError, match=r"unknown key.*color"):
        load_config(bad)
    bad.write_text("[experiment]\nname = 'x'\n")
    with pytest.raises(ConfigError, match="name and seed"):
        load_config(bad)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml")
    bad.write_text("not toml [ at all")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_config_semantic_validation():
    with pytest.raises(ConfigError, match="requires profile.path"):
        ExperimentConfig("x", 1, "out", profile_kind="import")
    with pytest.raises(ConfigError, match="workers"):
        ExperimentConfig("x", 1, "out", workers=0)


def test_environment_seed_override(tmp_path, monkeypatch):
    path = write_small_config(tmp_path)
    base = load_config(path)
    monkeypatch.setenv("GRIDSTATE_SEED", "999")
    overridden = load_config(path)
    assert overridden.seed == 999
    assert run_hash(overridden) != run_hash(base)


def test_run_hash_ignores_presentation_fields(tmp_path):
    config = load_config(write_small_config(tmp_path))
    from dataclasses import replace
    same = replace(config, name="other", output_dir="elsewhere", workers=8)
    assert run_hash(same) == run_hash(config)
    assert run_hash(replace(config, seed=20)) != run_hash(config)
    assert run_hash(replace(config, epochs=4)) != run_hash(config)


def test_config_round_trips_through_identity(tmp_path):
    config = load_config(write_small_config(tmp_path))
    rebuilt = config_from_identity(config.identity(), name=config.name,
                                   output_dir=config.output_dir)
    assert rebuilt == config
    assert run_hash(rebuilt) == run_hash(config)


def test_stage_errors_name_the_failing_stage():
    config = ExperimentConfig("x", 1, "out", case_source="ieee99")
    with pytest.raises(StageError, match="stage 'case'") as excinfo:
        run_experiment(config)
    assert excinfo.value.stage == "case"


def test_run_writes_consistent_artifacts(small_run):
    result, _ = small_run
    assert result.metrics_path.exists()
    lines = result.metrics_path.read_text().splitlines()
    assert lines[0] == f"# run {result.run}"
    assert lines[1] == "scope,metric,value"
    # 4 metrics for the ensemble plus 4 per learner
    assert len(lines) == 2 + 4 * (1 + 2)
    manifest = json.loads(result.manifest_path.read_text())
    assert manifest["run"] == result.run == run_hash(result.config)
    assert manifest["dataset_rows"] == 168
    assert manifest["test_rows"] == result.model.split.test.size
    meta = json.loads((result.model_dir / "meta.json").read_text())
    assert meta["run"] == result.run
    assert (result.output_dir / "dataset" / "rows.csv").exists()


def test_rerun_reuses_the_dataset_and_reproduces_bytes(small_run, caplog):
    result, tmp = small_run
    metrics_before = result.metrics_path.read_bytes()
    model_before = {p.name: p.read_bytes()
                    for p in sorted(result.model_dir.glob("*.json"))}
    import logging
    with caplog.at_level(logging.INFO, logger="gridstate.pipeline"):
        again = run_experiment(result.config)
    assert any("reusing dataset" in r.message for r in caplog.records)
    assert again.metrics_path.read_bytes() == metrics_before
    for p in sorted(again.model_dir.glob("*.json")):
        assert p.read_bytes() == model_before[p.name]


def test_separate_output_dirs_reproduce_identical_artifacts(small_run, tmp_path):
    result, _ = small_run
    from dataclasses import replace
    other = replace(result.config, output_dir=str(tmp_path / "dup"))
    dup = run_experiment(other)
    assert dup.run == result.run
    assert dup.metrics_path.read_bytes() == result.metrics_path.read_bytes()
    for p in sorted(dup.model_dir.glob("*.json")):
        assert p.read_bytes() == (result.model_dir / p.name).read_bytes()


def test_evaluation_measurements_are_seeded_by_hour(small_run):
    result, _ = small_run
    ds, config = result.dataset, result.config
    rows = result.model.split.test
    a = evaluation_measurements(ds, rows, config)
    b = evaluation_measurements(ds, rows, config)
    assert np.array_equal(a, b)
    from dataclasses import replace
    louder = evaluation_measurements(ds, rows, replace(config, test_snr_db=10.0))
    assert not np.array_equal(a, louder)
    # per-hour streams: row subsets agree with the full pass
    assert np.array_equal(evaluation_measurements(ds, rows[:3], config), a[:3])


def _cli():
    exe = shutil.which("gridstate")
    assert exe is not None, "console script not installed"
    return exe


def test_cli_case_validate_succeeds():
    proc = subprocess.run([_cli(), "case", "validate", "ieee14"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "14 buses" in proc.stdout
    assert "converged" in proc.stdout


def test_cli_reports_domain_errors_on_stderr(tmp_path):
    proc = subprocess.run([_cli(), "case", "validate",
                           str(tmp_path / "missing_case.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.startswith("error:")


def test_cli_wls_solve_round_trip(tmp_path):
    out = tmp_path / "state.csv"
    proc = subprocess.run(
        [_cli(), "wls", "solve", "--case", "ieee14", "--plan", "minimal14",
         "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    lines = out.read_text().splitlines()
    assert lines[0] == "bus,v_pu,theta_deg"
    assert len(lines) == 15
    first = lines[1].split(",")
    assert float(first[1]) == pytest.approx(1.06, abs=1e-6)
    assert float(first[2]) == 0.0
