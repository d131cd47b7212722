"""Lagged linear state forecasting and pseudo-measurement synthesis.

Each state dimension is regressed on its own last h+1 values:
x_{t+1} = a0 + b0 x_t + b1 x_{t-1} + ... + bh x_{t-h}.  The forecast state
fills masked measurement channels with h(x_forecast) so downstream
estimators can run on a complete vector.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .measurement import MeasurementVector, ResolvedPlan, evaluate_h
from .powerflow import StateVector

logger = logging.getLogger(__name__)

HORIZON = 24
FORECAST_FORMAT = "gridstate-forecaster"
FORECAST_VERSION = 1


@dataclass(frozen=True)
class ForecastModel:
    """Per-state coefficients [a0, b0..bh], shape (n_states, horizon + 2)."""

    coefficients: np.ndarray
    horizon: int
    residual_rms: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.ndim != 2 or coef.shape[1] != self.horizon + 2:
            raise ValueError("coefficients must be (n_states, horizon + 2)")
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "residual_rms",
                           np.asarray(self.residual_rms, dtype=float))

    @property
    def n_states(self) -> int:
        return self.coefficients.shape[0]


def fit_forecaster(history: np.ndarray, horizon: int = HORIZON) -> ForecastModel:
    """Per-state least squares over all sliding windows of the history.

    ``history`` is (T, n_states), time ascending, T > horizon + 1.  A state
    whose history is constant gets an intercept-only fit (logged) since its
    design carries no information beyond the mean.

    A series that satisfies an exact linear recurrence of order below the
    horizon makes the full lag design rank deficient (every deeper lag is a
    combination of shallower ones), and least squares then returns one of
    infinitely many exact predictors rather than the generating
    coefficients.  To keep coefficients identifiable the fit first looks for
    the smallest lag order whose residual is numerically zero; only when no
    exact low-order fit exists does it regress on the full horizon.
    """
    history = np.atleast_2d(np.asarray(history, dtype=float))
    T, n_states = history.shape
    if T <= horizon + 1:
        raise ValueError(f"history length {T} must exceed horizon + 1 = {horizon + 1}")
    rows = T - 1 - horizon
    coef = np.zeros((n_states, horizon + 2))
    rms = np.zeros(n_states)
    # lag matrix: row r (t = horizon + r) holds [x_t, x_{t-1}, .., x_{t-h}]
    for j in range(n_states):
        series = history[:, j]
        if np.ptp(series) == 0.0:
            coef[j, 0] = series[0]
            logger.info("state %d history is constant; intercept-only fit", j)
            continue
        design = np.ones((rows, horizon + 2))
        for lag in range(horizon + 1):
            design[:, 1 + lag] = series[horizon - lag:T - 1 - lag]
        target = series[horizon + 1:]
        sol, rms_j = _fit_lags(design, target)
        coef[j, :sol.size] = sol
        rms[j] = rms_j
    return ForecastModel(coef, horizon, rms)


def _fit_lags(design: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
    """Full-horizon least squares, or the smallest exactly-fitting order."""
    def solve(cols):
        sol, _, _, _ = scipy.linalg.lstsq(design[:, :cols], target)
        return sol, float(np.sqrt(np.mean((design[:, :cols] @ sol - target) ** 2)))

    full_sol, full_rms = solve(design.shape[1])
    tol = 1e-10 * max(1.0, float(np.max(np.abs(target))))
    if full_rms > tol:
        return full_sol, full_rms
    for cols in range(1, design.shape[1]):
        sol, rms = solve(cols)
        if rms <= tol:
            return sol, rms
    return full_sol, full_rms


def forecast_next(model: ForecastModel, window: np.ndarray) -> np.ndarray:
    """One-step forecast from the last horizon+1 states (time ascending)."""
    window = np.atleast_2d(np.asarray(window, dtype=float))
    expected = (model.horizon + 1, model.n_states)
    if window.shape != expected:
        raise ValueError(f"window must have shape {expected}, got {window.shape}")
    lags = window[::-1]  # row i is lag i
    return model.coefficients[:, 0] + np.einsum(
        "ls,ls->s", lags, model.coefficients[:, 1:].T)


def pseudo_measurements(forecast_state: StateVector, z: MeasurementVector,
                        resolved: ResolvedPlan) -> MeasurementVector:
    """Fill masked channels with h(forecast); available channels untouched."""
    if z.values.size != resolved.m:
        raise ValueError("measurement vector width does not match the plan")
    if np.all(z.mask):
        return MeasurementVector(z.timestamp, z.values.copy(), z.mask.copy())
    synthetic = evaluate_h(forecast_state, resolved)
    merged = np.where(z.mask, z.values, synthetic)
    return MeasurementVector(z.timestamp, merged, np.ones(resolved.m, dtype=bool))


def forecaster_to_json(model: ForecastModel, path: str | Path | None = None) -> str:
    payload = {
        "format": FORECAST_FORMAT,
        "version": FORECAST_VERSION,
        "horizon": model.horizon,
        "coefficients": model.coefficients.tolist(),
        "residual_rms": model.residual_rms.tolist(),
    }
    text = json.dumps(payload)
    if path is not None:
        Path(path).write_text(text)
    return text


def forecaster_from_json(source: str | Path) -> ForecastModel:
    text = str(source)
    if isinstance(source, Path) or not text.lstrip().startswith("{"):
        text = Path(source).read_text()
    raw = json.loads(text)
    if raw.get("format") != FORECAST_FORMAT:
        raise ValueError("not a serialized forecaster")
    if raw.get("version") != FORECAST_VERSION:
        raise ValueError(f"unsupported forecaster version {raw.get('version')}")
    return ForecastModel(np.array(raw["coefficients"], dtype=float),
                         int(raw["horizon"]),
                         np.array(raw["residual_rms"], dtype=float))
