"""Weighted least squares state estimation via Gauss-Newton.

Minimizes J(x) = 1/2 (z - h(x))' W (z - h(x)) with W = diag(1/sigma^2),
iterating G dx = H' W (z - h) from a flat start with the slack angle pinned.
Serves both as the training-label generator and as the classical baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cases import NetworkCase
from .errors import MaskedMeasurementError, SingularGainError
from .measurement import (MeasurementPlan, MeasurementVector, ResolvedPlan,
                          evaluate_h, evaluate_jacobian, resolve_plan)
from .powerflow import StateVector

MAX_STEP_HALVINGS = 6


@dataclass(frozen=True)
class EstimationResult:
    """Converged (or best-effort) WLS solution with its fit diagnostics.

    ``objective_history`` holds J at the initial point and after every
    accepted step; ``residual_norm`` is the weighted norm sqrt(r' W r).
    """

    state: StateVector
    iterations: int
    converged: bool
    objective: float
    residual_norm: float
    objective_history: tuple[float, ...]


def weight_vector(plan: MeasurementPlan) -> np.ndarray:
    """Diagonal of W: one inverse-variance weight per channel."""
    return 1.0 / np.square(plan.sigmas())


def objective(z, state: StateVector, resolved: ResolvedPlan,
              weights: np.ndarray | None = None) -> float:
    """J(x) = 1/2 sum_k w_k (z_k - h_k(x))^2; nonnegative by construction."""
    values = z.values if isinstance(z, MeasurementVector) else np.asarray(z, dtype=float)
    if weights is None:
        weights = weight_vector(resolved.plan)
    r = values - evaluate_h(state, resolved)
    return 0.5 * float(r @ (weights * r))


def _coerce_resolved(plan, case: NetworkCase | None) -> ResolvedPlan:
    if isinstance(plan, ResolvedPlan):
        return plan
    if case is None:
        raise TypeError("a NetworkCase is required when passing an unresolved plan")
    return resolve_plan(plan, case)


def estimate_wls(z: MeasurementVector | np.ndarray, plan: MeasurementPlan | ResolvedPlan,
                 case: NetworkCase | None = None, *,
                 x0: StateVector | None = None,
                 tol: float = 1e-6, max_iter: int = 50) -> EstimationResult:
    """Gauss-Newton WLS estimate of the network state from measurements.

    Each iteration solves the normal equations G dx = H' W (z - h) with
    G = H' W H via Cholesky; a step that increases J is halved up to
    MAX_STEP_HALVINGS times before being accepted.  Stops when the applied
    update satisfies max|dx| < tol.  Non-convergence is reported through
    the ``converged`` flag; a singular or indefinite gain matrix raises
    SingularGainError instead.
    """
    resolved = _coerce_resolved(plan, case)
    if not isinstance(z, MeasurementVector):
        z = MeasurementVector.full(0, np.asarray(z, dtype=float))
    if not np.all(z.mask):
        missing = int(np.count_nonzero(~z.mask))
        raise MaskedMeasurementError(
            f"{missing} masked channel(s); substitute forecaster pseudo-measurements "
            "before estimating")
    if z.values.size != resolved.m:
        raise ValueError(f"measurement vector has {z.values.size} entries, plan has {resolved.m}")

    n = resolved.case.n_buses
    slack = resolved.case.slack_index
    nonslack = np.array([i for i in range(n) if i != slack], dtype=int)
    w = weight_vector(resolved.plan)
    if x0 is not None:
        v = x0.v.copy()
        theta = x0.theta.copy()
    else:
        v = np.ones(n)
        theta = np.zeros(n)

    def j_of(v_arr, th_arr):
        return objective(z.values, StateVector(v_arr, th_arr), resolved, w)

    j_cur = j_of(v, theta)
    history = [j_cur]
    iterations = 0
    converged = False
    for _ in range(max_iter):
        state = StateVector(v, theta)
        r = z.values - evaluate_h(state, resolved)
        H = evaluate_jacobian(state, resolved)
        gain = H.T @ (w[:, None] * H)
        rhs = H.T @ (w * r)
        try:
            factor = scipy.linalg.cho_factor(gain)
            dx = scipy.linalg.cho_solve(factor, rhs)
        except scipy.linalg.LinAlgError as exc:
            raise SingularGainError(
                "gain matrix H'WH is singular or indefinite; the plan is "
                "unobservable under this measurement set") from exc
        if not np.all(np.isfinite(dx)):
            raise SingularGainError("gain matrix solve produced non-finite step")

        scale = 1.0
        for _halving in range(MAX_STEP_HALVINGS + 1):
            theta_new = theta.copy()
            theta_new[nonslack] += scale * dx[:n - 1]
            v_new = v + scale * dx[n - 1:]
            if np.all(v_new > 0):
                j_new = j_of(v_new, theta_new)
                if j_new <= j_cur or _halving == MAX_STEP_HALVINGS:
                    break
            elif _halving == MAX_STEP_HALVINGS:
                j_new = j_of(np.maximum(v_new, 1e-6), theta_new)
                v_new = np.maximum(v_new, 1e-6)
                break
            scale *= 0.5
        v, theta, j_cur = v_new, theta_new, j_new
        history.append(j_cur)
        iterations += 1
        if scale * float(np.max(np.abs(dx))) < tol:
            converged = True
            break

    state = StateVector(v, theta)
    r = z.values - evaluate_h(state, resolved)
    return EstimationResult(
        state=state,
        iterations=iterations,
        converged=converged,
        objective=0.5 * float(r @ (w * r)),
        residual_norm=float(np.sqrt(r @ (w * r))),
        objective_history=tuple(history),
    )
