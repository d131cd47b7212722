"""Stacked ensemble: parallel ResNetD base-learners under an MLR meta-learner.

Six identically configured base-learners train on the same 40% split with
distinct seeds; a multivariate linear regression over their concatenated
predictions is fit by least squares on the 36% meta split; the remaining
24% is held out for testing.  Estimates are pure functions of (model, z).
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigError, MaskedMeasurementError
from .measurement import MeasurementVector
from .neural import (StateEstimator, TrainingConfig, estimator_from_json,
                     estimator_to_json, fit_state_estimator)
from .powerflow import StateVector
from .seeds import ROLE_LEARNER, ROLE_SPLIT, derive_seed

logger = logging.getLogger(__name__)

BASE_TRAIN_FRACTION = 0.40
META_TRAIN_FRACTION = 0.36
# Ridge penalty used only when the meta design matrix is rank deficient,
# expressed relative to the mean diagonal entry of its normal matrix so the
# effective strength tracks the feature energy and row count.
RIDGE_LAMBDA = 1e-4
META_FORMAT = "gridstate-ensemble-meta"
META_VERSION = 1


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint, exhaustive 40/36/24 partition of timestamp indices."""

    base_train: np.ndarray
    meta_train: np.ndarray
    test: np.ndarray
    seed: int

    def __post_init__(self):
        parts = (np.asarray(self.base_train, dtype=int),
                 np.asarray(self.meta_train, dtype=int),
                 np.asarray(self.test, dtype=int))
        for name, arr in zip(("base_train", "meta_train", "test"), parts):
            object.__setattr__(self, name, arr)
        merged = np.concatenate(parts)
        if np.unique(merged).size != merged.size:
            raise ValueError("split parts overlap")
        if not np.array_equal(np.sort(merged), np.arange(merged.size)):
            raise ValueError("split does not cover 0..n-1 exactly")

    @classmethod
    def make(cls, n_rows: int, seed: int) -> "SplitSpec":
        if n_rows < 3:
            raise ValueError("need at least 3 rows to split")
        perm = np.random.Generator(np.random.PCG64(seed)).permutation(n_rows)
        n_base = int(np.floor(BASE_TRAIN_FRACTION * n_rows))
        n_meta = int(np.floor(META_TRAIN_FRACTION * n_rows))
        return cls(perm[:n_base], perm[n_base:n_base + n_meta],
                   perm[n_base + n_meta:], seed)


@dataclass(frozen=True)
class EnsembleConfig:
    n_learners: int = 6
    training: TrainingConfig = TrainingConfig()
    seed: int = 0

    def __post_init__(self):
        if self.n_learners < 1:
            raise ValueError("need at least one base-learner")


@dataclass
class EnsembleModel:
    """Base-learners plus meta coefficients of shape (2n, L*2n + 1)."""

    base_learners: tuple[StateEstimator, ...]
    meta: np.ndarray
    split: SplitSpec
    n_buses: int
    ridge_fallback: bool = False

    def __post_init__(self):
        width = 2 * self.n_buses
        expected = (width, len(self.base_learners) * width + 1)
        if self.meta.shape != expected:
            raise ValueError(f"meta coefficients must have shape {expected}")

    @property
    def input_width(self) -> int:
        return self.base_learners[0].network.input_width


def base_predictions(model_or_learners, z: np.ndarray) -> np.ndarray:
    """Concatenated natural-unit predictions from every base-learner."""
    learners = getattr(model_or_learners, "base_learners", model_or_learners)
    return np.hstack([learner.predict(np.atleast_2d(z)) for learner in learners])


def fit_meta(features: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, bool]:
    """Least-squares meta coefficients; ridge fallback on rank deficiency.

    Exactly-constant feature columns (a base-learner output stuck at one
    value) duplicate the intercept; they are excluded from the solve and
    their coefficients reported as zero, so the returned matrix is always
    shaped (targets_width, features_width + 1).

    A rank-deficient design lets least squares place arbitrarily large
    coefficients on near-null feature directions, and any prediction-time
    perturbation along those directions is amplified by the same factor.
    The fallback therefore solves a ridge system whose penalty is scaled to
    the mean feature energy, then keeps whichever of the ridge fit and the
    uniform base-learner average has the smaller meta-split residual, so the
    returned coefficients never lose to plain averaging in sample.
    """
    varying = features.std(axis=0) > 0.0
    design = np.hstack([np.ones((features.shape[0], 1)), features[:, varying]])
    coef, _, rank, _ = scipy.linalg.lstsq(design, targets, lapack_driver="gelsy")
    fallback = rank < design.shape[1]
    if fallback:
        gram = design.T @ design
        lam = RIDGE_LAMBDA * float(np.trace(gram)) / gram.shape[0]
        logger.warning(
            "meta design matrix is rank deficient (%d < %d); falling back to "
            "ridge with lambda=%g", rank, design.shape[1], lam)
        coef = np.linalg.solve(gram + lam * np.eye(gram.shape[0]),
                               design.T @ targets)
    full = np.zeros((targets.shape[1], features.shape[1] + 1))
    full[:, 0] = coef[0]
    full[:, np.flatnonzero(varying) + 1] = coef[1:].T
    if fallback and features.shape[1] % targets.shape[1] == 0:
        full = _prefer_average(full, features, targets)
    return full, fallback


def _prefer_average(coef: np.ndarray, features: np.ndarray,
                    targets: np.ndarray) -> np.ndarray:
    """Swap in uniform-average coefficients when they beat the ridge fit.

    Plain least squares never needs this guard: the average lies inside its
    hypothesis space, so the optimum cannot do worse.  Ridge loses that
    guarantee, and this restores it by construction.
    """
    width = targets.shape[1]
    n_learners = features.shape[1] // width
    average = np.zeros_like(coef)
    for i in range(n_learners):
        block = slice(1 + i * width, 1 + (i + 1) * width)
        average[:, block] = np.eye(width) / n_learners

    def sse(c: np.ndarray) -> float:
        pred = c[:, 0] + features @ c[:, 1:].T
        return float(((pred - targets) ** 2).sum())

    if sse(average) <= sse(coef):
        logger.info("uniform base-learner average beats the ridge fit on the "
                    "meta split; using the average")
        return average
    return coef


def train_ensemble(inputs: np.ndarray, states: np.ndarray, n_buses: int,
                   config: EnsembleConfig = EnsembleConfig()) -> EnsembleModel:
    """Train base-learners on the 40% split and the meta-learner on the 36%.

    Base-learners share data and hyperparameters; diversity comes only from
    their derived seeds.  The meta-learner never sees base-train rows.
    """
    inputs = np.asarray(inputs, dtype=float)
    states = np.asarray(states, dtype=float)
    if inputs.shape[0] != states.shape[0]:
        raise ValueError("inputs and states must have matching row counts")
    width = 2 * n_buses
    if states.shape[1] != width:
        raise ValueError("state rows must have width 2 * n_buses")
    split = SplitSpec.make(inputs.shape[0], derive_seed(config.seed, ROLE_SPLIT))
    needed = config.n_learners * width + 1
    if split.meta_train.size < needed:
        raise ConfigError(
            f"meta-learner needs >= {needed} rows to be determined, split "
            f"provides {split.meta_train.size}; enlarge the dataset")
    learners = []
    for i in range(config.n_learners):
        cfg = replace(config.training, seed=derive_seed(config.seed, ROLE_LEARNER, i))
        learners.append(fit_state_estimator(
            inputs[split.base_train], states[split.base_train], n_buses, cfg))
    features = base_predictions(learners, inputs[split.meta_train])
    meta, fallback = fit_meta(features, states[split.meta_train])
    return EnsembleModel(tuple(learners), meta, split, n_buses, fallback)


def estimate(model: EnsembleModel, z) -> StateVector:
    """Ensemble state estimate for one measurement vector."""
    if isinstance(z, MeasurementVector):
        if not np.all(z.mask):
            missing = int(np.count_nonzero(~z.mask))
            raise MaskedMeasurementError(
                f"{missing} masked channel(s); fill them with forecaster "
                "pseudo-measurements before estimating")
        z = z.values
    z = np.asarray(z, dtype=float)
    if z.shape != (model.input_width,):
        raise ValueError(f"expected a measurement vector of width "
                         f"{model.input_width}, got shape {z.shape}")
    features = base_predictions(model, z)[0]
    x = model.meta[:, 0] + model.meta[:, 1:] @ features
    return StateVector(x[:model.n_buses], x[model.n_buses:])


def estimate_batch(model: EnsembleModel, z: np.ndarray) -> np.ndarray:
    """Vectorized estimates, rows of (v_1..v_n, theta_1..theta_n)."""
    features = base_predictions(model, np.asarray(z, dtype=float))
    return features @ model.meta[:, 1:].T + model.meta[:, 0]


def measure_latency(model: EnsembleModel, z: np.ndarray, repeats: int = 25) -> float:
    """Median single-instance inference time in seconds."""
    z = np.asarray(z, dtype=float)
    estimate(model, z)  # warm-up outside the timed region
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        estimate(model, z)
        times.append(time.perf_counter() - start)
    return float(np.median(times))


@dataclass(frozen=True)
class Metrics:
    """Voltage metrics in percent of per-unit, angle metrics in degrees."""

    v_rmse_pct: float
    v_mae_pct: float
    theta_rmse_deg: float
    theta_mae_deg: float


def state_metrics(predicted: np.ndarray, actual: np.ndarray, n_buses: int) -> Metrics:
    predicted = np.atleast_2d(predicted)
    actual = np.atleast_2d(actual)
    dv = (predicted[:, :n_buses] - actual[:, :n_buses]) * 100.0
    dth = np.degrees(predicted[:, n_buses:] - actual[:, n_buses:])
    return Metrics(
        v_rmse_pct=float(np.sqrt(np.mean(dv ** 2))),
        v_mae_pct=float(np.mean(np.abs(dv))),
        theta_rmse_deg=float(np.sqrt(np.mean(dth ** 2))),
        theta_mae_deg=float(np.mean(np.abs(dth))),
    )


@dataclass(frozen=True)
class EvaluationReport:
    ensemble: Metrics
    per_learner: tuple[Metrics, ...]


def evaluate(model: EnsembleModel, inputs: np.ndarray,
             states: np.ndarray) -> EvaluationReport:
    """Ensemble and per-learner metrics over a held-out set."""
    inputs = np.asarray(inputs, dtype=float)
    states = np.asarray(states, dtype=float)
    if inputs.shape[0] == 0:
        raise ValueError("evaluation set must be nonempty")
    ens = state_metrics(estimate_batch(model, inputs), states, model.n_buses)
    per = tuple(state_metrics(learner.predict(inputs), states, model.n_buses)
                for learner in model.base_learners)
    return EvaluationReport(ens, per)


def save_ensemble(model: EnsembleModel, directory: str | Path) -> None:
    """Write one JSON per base-learner plus the meta/split record."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, learner in enumerate(model.base_learners):
        estimator_to_json(learner, directory / f"learner_{i}.json")
    meta = {
        "format": META_FORMAT,
        "version": META_VERSION,
        "n_buses": model.n_buses,
        "n_learners": len(model.base_learners),
        "ridge_fallback": model.ridge_fallback,
        "coefficients": model.meta.tolist(),
        "split": {
            "seed": model.split.seed,
            "base_train": model.split.base_train.tolist(),
            "meta_train": model.split.meta_train.tolist(),
            "test": model.split.test.tolist(),
        },
    }
    (directory / "meta.json").write_text(json.dumps(meta))


def load_ensemble(directory: str | Path) -> EnsembleModel:
    directory = Path(directory)
    raw = json.loads((directory / "meta.json").read_text())
    if raw.get("format") != META_FORMAT:
        raise ValueError(f"{directory} does not contain an ensemble model")
    if raw.get("version") != META_VERSION:
        raise ValueError(f"unsupported ensemble version {raw.get('version')}")
    learners = tuple(
        estimator_from_json(directory / f"learner_{i}.json")
        for i in range(raw["n_learners"]))
    split = SplitSpec(
        np.array(raw["split"]["base_train"], dtype=int),
        np.array(raw["split"]["meta_train"], dtype=int),
        np.array(raw["split"]["test"], dtype=int),
        raw["split"]["seed"])
    return EnsembleModel(learners, np.array(raw["coefficients"], dtype=float),
                         split, raw["n_buses"], raw["ridge_fallback"])
