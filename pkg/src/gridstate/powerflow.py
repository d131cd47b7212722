"""AC power flow by full Newton-Raphson in polar coordinates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cases import BusKind, NetworkCase
from .errors import CaseValidationError
from .ybus import AdmittanceMatrix, build_ybus

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 30


@dataclass(frozen=True)
class StateVector:
    """Bus voltage magnitudes (pu) and angles (rad), aligned with case order."""

    v: np.ndarray
    theta: np.ndarray
    case: NetworkCase | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if v.shape != theta.shape or v.ndim != 1:
            raise ValueError("v and theta must be 1-d arrays of equal length")
        if np.any(v <= 0):
            raise ValueError("voltage magnitudes must be positive")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "theta", theta)

    @property
    def n(self) -> int:
        return self.v.size

    def complex_voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


@dataclass(frozen=True)
class LoadScenario:
    """Per-bus multiplier applied to the nominal net loads at one instant."""

    timestamp: int
    scale: np.ndarray

    def __post_init__(self):
        scale = np.atleast_1d(np.asarray(self.scale, dtype=float))
        if np.any(scale < 0):
            raise ValueError("load scale entries must be nonnegative")
        object.__setattr__(self, "scale", scale)

    @classmethod
    def uniform(cls, case: NetworkCase, factor: float, timestamp: int = 0) -> "LoadScenario":
        return cls(timestamp, np.full(case.n_buses, float(factor)))


@dataclass(frozen=True)
class PowerFlowSolution:
    state: StateVector
    iterations: int
    max_mismatch: float
    converged: bool
    # "max_iterations" or "singular_jacobian" when not converged
    failure: str | None = None


def injected_power(state: StateVector, ybus: AdmittanceMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Net complex power injected at every bus, split into (p, q) in pu."""
    vc = state.complex_voltage()
    s = vc * np.conj(ybus.matrix @ vc)
    return s.real, s.imag


def total_loss(state: StateVector, ybus: AdmittanceMatrix) -> float:
    """Total real power absorbed by the network (series plus shunt), pu."""
    p, _ = injected_power(state, ybus)
    return float(p.sum())


def scheduled_injection(case: NetworkCase, scenario: LoadScenario | None) -> tuple[np.ndarray, np.ndarray]:
    """Scheduled per-unit net injections implied by the scaled loads."""
    p_load = np.array([b.p_load_mw for b in case.buses])
    q_load = np.array([b.q_load_mvar for b in case.buses])
    if scenario is None:
        scale = np.ones(case.n_buses)
    else:
        scale = scenario.scale
        if scale.size == 1:
            scale = np.full(case.n_buses, scale[0])
        elif scale.size != case.n_buses:
            raise ValueError(f"scale has {scale.size} entries for {case.n_buses} buses")
    return -p_load * scale / case.base_mva, -q_load * scale / case.base_mva


def _jacobian_blocks(vc: np.ndarray, ybus_dense_like) -> tuple[np.ndarray, np.ndarray]:
    """dS/dtheta and dS/d|V| for all buses (complex n-by-n blocks)."""
    ibus = ybus_dense_like @ vc
    diag_v = np.diag(vc)
    diag_i = np.diag(ibus)
    diag_e = np.diag(vc / np.abs(vc))
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus_dense_like @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus_dense_like @ diag_e) + np.conj(diag_i) @ diag_e
    return ds_dva, ds_dvm


def solve_power_flow(case: NetworkCase,
                     scenario: LoadScenario | None = None,
                     ybus: AdmittanceMatrix | None = None,
                     tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> PowerFlowSolution:
    """Solve the power flow from a flat start.

    PV buses hold v at their setpoint with p scheduled; the slack holds both
    v and theta.  Returns the best iterate with ``converged=False`` when the
    mismatch cannot be brought under ``tol`` in ``max_iter`` steps; a singular
    Newton matrix is reported distinctly through ``failure``.
    """
    if ybus is None:
        ybus = build_ybus(case)
    n = case.n_buses
    kinds = [b.kind for b in case.buses]
    slack = case.slack_index
    pv = np.array([i for i, k in enumerate(kinds) if k == BusKind.PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k == BusKind.PQ], dtype=int)
    pvpq = np.concatenate([pv, pq])
    p_sched, q_sched = scheduled_injection(case, scenario)

    v = np.ones(n)
    for i, bus in enumerate(case.buses):
        if bus.kind != BusKind.PQ:
            v[i] = bus.v_setpoint
    theta = np.zeros(n)
    y = ybus.matrix.toarray()

    def mismatch(vm, va):
        vc = vm * np.exp(1j * va)
        s = vc * np.conj(y @ vc)
        return np.concatenate([s.real[pvpq] - p_sched[pvpq], s.imag[pq] - q_sched[pq]])

    iterations = 0
    failure = None
    best = (v.copy(), theta.copy(), np.inf)
    while True:
        f = mismatch(v, theta)
        norm = float(np.max(np.abs(f))) if f.size else 0.0
        if norm < best[2]:
            best = (v.copy(), theta.copy(), norm)
        if norm < tol:
            break
        if iterations >= max_iter:
            failure = "max_iterations"
            break
        vc = v * np.exp(1j * theta)
        ds_dva, ds_dvm = _jacobian_blocks(vc, y)
        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            failure = "singular_jacobian"
            break
        theta[pvpq] += dx[:pvpq.size]
        v[pq] += dx[pvpq.size:]
        iterations += 1
        if np.any(v <= 0):
            # iterate left the feasible region; fall back to the best seen
            failure = "max_iterations"
            break

    v_best, theta_best, norm_best = best
    converged = bool(norm_best < tol)
    state = StateVector(v_best, theta_best, case)
    return PowerFlowSolution(state, iterations, norm_best, converged,
                             None if converged else failure)
