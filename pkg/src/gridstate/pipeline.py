"""End-to-end experiment runs driven by a TOML config.

A run loads (or generates) a dataset, trains the stacked ensemble, evaluates
it on the held-out test split under fresh test-time noise, and writes a
metrics table plus a run manifest.  Every artifact carries the run hash, a
digest of the content-determining config fields, so reruns with the same
config and seed reproduce every file byte for byte.

The ``GRIDSTATE_SEED`` environment variable overrides the config seed.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .cases import NetworkCase, load_bundled_case, parse_case
from .dataset import (Dataset, NoiseSpec, generate_dataset, load_dataset,
                      save_dataset)
from .ensemble import (EnsembleConfig, EnsembleModel, EvaluationReport,
                       evaluate, save_ensemble, train_ensemble)
from .errors import ConfigError, StageError
from .measurement import MeasurementPlan, default_plan
from .neural import TrainingConfig
from .profiles import LoadProfile, import_profile, synth_profile
from .seeds import ROLE_PROFILE, ROLE_TEST_NOISE, derive_seed

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "gridstate-run"
MANIFEST_VERSION = 1

_SECTION_KEYS = {
    "experiment": {"name", "seed", "output_dir"},
    "case": {"source"},
    "plan": {"source"},
    "profile": {"kind", "hours", "noise_amp", "path"},
    "noise": {"kind", "train_snr_db", "test_snr_db", "max_pct"},
    "dataset": {"workers"},
    "training": {"n_learners", "epochs", "batch_size", "learning_rate"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; content fields feed the run hash."""

    name: str
    seed: int
    output_dir: str
    case_source: str = "ieee14"
    plan_source: str = "minimal14"
    profile_kind: str = "synthetic"
    profile_hours: int = 4200
    profile_noise_amp: float = 0.05
    profile_path: str | None = None
    noise_kind: str = "gaussian"
    train_snr_db: float = 50.0
    test_snr_db: float = 20.0
    noise_max_pct: float = 0.03
    workers: int = 1
    n_learners: int = 6
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.profile_kind not in ("synthetic", "import"):
            raise ConfigError("profile.kind must be 'synthetic' or 'import'")
        if self.profile_kind == "import" and not self.profile_path:
            raise ConfigError("profile.kind 'import' requires profile.path")
        if self.workers < 1:
            raise ConfigError("dataset.workers must be >= 1")

    def identity(self) -> dict:
        """Fields that determine artifact content; workers, name, and
        output location deliberately excluded."""
        return {
            "seed": self.seed,
            "case": self.case_source,
            "plan": self.plan_source,
            "profile": {"kind": self.profile_kind, "hours": self.profile_hours,
                        "noise_amp": self.profile_noise_amp,
                        "path": self.profile_path},
            "noise": {"kind": self.noise_kind, "train_snr_db": self.train_snr_db,
                      "test_snr_db": self.test_snr_db,
                      "max_pct": self.noise_max_pct},
            "training": {"n_learners": self.n_learners, "epochs": self.epochs,
                         "batch_size": self.batch_size,
                         "learning_rate": self.learning_rate},
        }


def run_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config.identity(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def config_from_identity(identity: dict, *, name: str, output_dir: str,
                         workers: int = 1) -> ExperimentConfig:
    """Rebuild a config from a manifest's identity block.

    Inverse of identity() up to the deliberately excluded fields, so
    run_hash(rebuilt) matches the manifest's recorded hash.
    """
    profile = identity["profile"]
    noise = identity["noise"]
    training = identity["training"]
    return ExperimentConfig(
        name=name, seed=identity["seed"], output_dir=output_dir,
        case_source=identity["case"], plan_source=identity["plan"],
        profile_kind=profile["kind"], profile_hours=profile["hours"],
        profile_noise_amp=profile["noise_amp"], profile_path=profile["path"],
        noise_kind=noise["kind"], train_snr_db=noise["train_snr_db"],
        test_snr_db=noise["test_snr_db"], noise_max_pct=noise["max_pct"],
        workers=workers, n_learners=training["n_learners"],
        epochs=training["epochs"], batch_size=training["batch_size"],
        learning_rate=training["learning_rate"])


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    for section, table in raw.items():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        extra = set(table) - _SECTION_KEYS[section]
        if extra:
            raise ConfigError(
                f"{path}: unknown key(s) {sorted(extra)} in [{section}]")

    exp = raw.get("experiment", {})
    if "name" not in exp or "seed" not in exp:
        raise ConfigError(f"{path}: [experiment] needs name and seed")
    seed = int(os.environ.get("GRIDSTATE_SEED", exp["seed"]))

    prof = raw.get("profile", {})
    noise = raw.get("noise", {})
    training = raw.get("training", {})
    return ExperimentConfig(
        name=str(exp["name"]),
        seed=seed,
        output_dir=str(exp.get("output_dir", f"runs/{exp['name']}")),
        case_source=str(raw.get("case", {}).get("source", "ieee14")),
        plan_source=str(raw.get("plan", {}).get("source", "minimal14")),
        profile_kind=str(prof.get("kind", "synthetic")),
        profile_hours=int(prof.get("hours", 4200)),
        profile_noise_amp=float(prof.get("noise_amp", 0.05)),
        profile_path=prof.get("path"),
        noise_kind=str(noise.get("kind", "gaussian")),
        train_snr_db=float(noise.get("train_snr_db", 50.0)),
        test_snr_db=float(noise.get("test_snr_db", 20.0)),
        noise_max_pct=float(noise.get("max_pct", 0.03)),
        workers=int(raw.get("dataset", {}).get("workers", 1)),
        n_learners=int(training.get("n_learners", 6)),
        epochs=int(training.get("epochs", 200)),
        batch_size=int(training.get("batch_size", 64)),
        learning_rate=float(training.get("learning_rate", 1e-3)),
    )


@dataclass
class RunResult:
    config: ExperimentConfig
    run: str
    dataset: Dataset
    model: EnsembleModel
    report: EvaluationReport
    output_dir: Path
    timings: dict = field(default_factory=dict)

    @property
    def metrics_path(self) -> Path:
        return self.output_dir / "metrics.csv"

    @property
    def manifest_path(self) -> Path:
        return self.output_dir / "manifest.json"

    @property
    def model_dir(self) -> Path:
        return self.output_dir / "model"


@contextmanager
def _stage(name: str, timings: dict):
    start = time.perf_counter()
    logger.info("stage %s started", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, str(exc)) from exc
    finally:
        timings[name] = time.perf_counter() - start


def load_case_source(source: str) -> NetworkCase:
    """Bundled case name, or a path to a case file."""
    if Path(source).exists():
        return parse_case(source)
    return load_bundled_case(source)


def load_plan_source(source: str, case: NetworkCase) -> MeasurementPlan:
    """Preset plan name, or a path to a plan JSON."""
    if Path(source).exists():
        return MeasurementPlan.from_json(Path(source))
    return default_plan(source, case)


def build_profile(config: ExperimentConfig) -> LoadProfile:
    if config.profile_kind == "import":
        return import_profile(config.profile_path)
    return synth_profile(config.profile_hours,
                         derive_seed(config.seed, ROLE_PROFILE),
                         noise_amp=config.profile_noise_amp)


def _dataset_matches(manifest: dict, config: ExperimentConfig,
                     profile: LoadProfile) -> bool:
    want = {
        "case": config.case_source,
        "plan": config.plan_source,
        "seed": config.seed,
        "noise": {"kind": config.noise_kind, "snr_db": config.train_snr_db,
                  "max_pct": config.noise_max_pct},
        "profile": profile.provenance,
    }
    have = {k: manifest.get(k) for k in want}
    return have == want


def evaluation_measurements(ds: Dataset, test_indices: np.ndarray,
                      config: ExperimentConfig) -> np.ndarray:
    """Fresh test-time noise on the clean test rows, seeded per hour."""
    spec = NoiseSpec(config.noise_kind, snr_db=config.test_snr_db,
                     max_pct=config.noise_max_pct)
    rows = []
    for i in test_indices:
        t = int(ds.timestamps[i])
        rows.append(spec.apply(ds.z_clean[i],
                               derive_seed(config.seed, ROLE_TEST_NOISE, t)))
    return np.array(rows)


def prepare_dataset(config: ExperimentConfig, case: NetworkCase,
                    plan: MeasurementPlan, profile: LoadProfile, *,
                    force: bool = False) -> Dataset:
    """Generate the training dataset under the output directory, or reuse
    the existing one when its manifest matches the config."""
    ds_dir = Path(config.output_dir) / "dataset"
    if not force and (ds_dir / "manifest.json").exists():
        cached = load_dataset(ds_dir)
        if _dataset_matches(cached.manifest, config, profile):
            logger.info("reusing dataset at %s", ds_dir)
            return cached
        logger.info("dataset at %s does not match config; regenerating", ds_dir)
    noise = NoiseSpec(config.noise_kind, snr_db=config.train_snr_db,
                      max_pct=config.noise_max_pct)
    ds = generate_dataset(case, plan, profile, noise, config.seed,
                          case_name=config.case_source,
                          workers=config.workers)
    save_dataset(ds, ds_dir, run_hash=run_hash(config))
    return ds


def metrics_rows(report: EvaluationReport) -> list[tuple[str, str, float]]:
    rows = []
    for scope, metrics in [("ensemble", report.ensemble)] + [
            (f"learner_{i}", m) for i, m in enumerate(report.per_learner)]:
        for metric, value in asdict(metrics).items():
            rows.append((scope, metric, float(value)))
    return rows


def write_metrics(path: Path, report: EvaluationReport, run: str) -> None:
    lines = [f"# run {run}", "scope,metric,value"]
    lines += [f"{scope},{metric},{repr(value)}"
              for scope, metric, value in metrics_rows(report)]
    path.write_text("\n".join(lines) + "\n")


def _tag_json(path: Path, run: str) -> None:
    obj = json.loads(path.read_text())
    obj["run"] = run
    path.write_text(json.dumps(obj))


def run_experiment(config: ExperimentConfig, *, force: bool = False) -> RunResult:
    """Execute dataset -> train -> evaluate -> artifacts for one config.

    An existing dataset under the output directory is reused when its
    manifest matches the config; pass force=True to regenerate.
    """
    timings: dict = {}
    run = run_hash(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    with _stage("case", timings):
        case = load_case_source(config.case_source)
    with _stage("plan", timings):
        plan = load_plan_source(config.plan_source, case)
    with _stage("profile", timings):
        profile = build_profile(config)

    with _stage("dataset", timings):
        ds = prepare_dataset(config, case, plan, profile, force=force)

    with _stage("train", timings):
        training = TrainingConfig(epochs=config.epochs,
                                  batch_size=config.batch_size,
                                  learning_rate=config.learning_rate)
        model = train_ensemble(
            ds.z_noisy, ds.x_wls, ds.n_buses,
            EnsembleConfig(config.n_learners, training, config.seed))
        model_dir = out / "model"
        save_ensemble(model, model_dir)
        for f in sorted(model_dir.glob("*.json")):
            _tag_json(f, run)

    with _stage("evaluate", timings):
        z_test = evaluation_measurements(ds, model.split.test, config)
        report = evaluate(model, z_test, ds.x_wls[model.split.test])

    with _stage("artifacts", timings):
        write_metrics(out / "metrics.csv", report, run)
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "run": run,
            "name": config.name,
            "toolkit_version": __version__,
            "config": config.identity(),
            "dataset_rows": ds.n_rows,
            "skipped_hours": len(ds.manifest.get("skipped", [])),
            "test_rows": int(model.split.test.size),
            "ridge_fallback": model.ridge_fallback,
            "metrics": [{"scope": s, "metric": m, "value": v}
                        for s, m, v in metrics_rows(report)],
            "timings_s": {k: round(v, 3) for k, v in timings.items()},
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")

    logger.info("run %s complete: ensemble voltage RMSE %.4f%%, "
                "phase RMSE %.4f deg", run, report.ensemble.v_rmse_pct,
                report.ensemble.theta_rmse_deg)
    return RunResult(config, run, ds, model, report, out, timings)
