"""Measurement model: channel definitions, h(x), its Jacobian and noise.

A measurement plan is an ordered list of channels.  Order matters: vectors,
masks, noise application and the CSV column layout all follow plan order.
The Jacobian columns are ordered angles-then-magnitudes with the slack angle
excluded, so H is m-by-(2n-1).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .cases import BusKind, NetworkCase
from .errors import PlanError
from .powerflow import StateVector
from .ybus import AdmittanceMatrix, build_ybus

# Channel noise levels used by every bundled plan (pu / rad).
SIGMA_VMAG = 0.01
SIGMA_VANG = 0.01414
SIGMA_FLOW = 0.01414
SIGMA_INJ = 0.0122


class MeasurementKind(str, Enum):
    VMAG = "Vmag"
    VANG = "Vang"
    PINJ = "Pinj"
    QINJ = "Qinj"
    PFLOW = "Pflow"
    QFLOW = "Qflow"


_BUS_KINDS = {MeasurementKind.VMAG, MeasurementKind.VANG,
              MeasurementKind.PINJ, MeasurementKind.QINJ}
_FLOW_KINDS = {MeasurementKind.PFLOW, MeasurementKind.QFLOW}


@dataclass(frozen=True)
class MeasurementSpec:
    """One measurement channel.

    ``location`` is a bus id for voltage and injection channels, or an
    ordered ``(metered_end, far_end)`` bus pair for flow channels.
    """

    kind: MeasurementKind
    location: int | tuple[int, int]
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise PlanError(f"{self.kind.value} at {self.location}: sigma must be positive")
        if self.kind in _BUS_KINDS:
            if not isinstance(self.location, int):
                raise PlanError(f"{self.kind.value} location must be a bus id")
        else:
            loc = self.location
            if not (isinstance(loc, tuple) and len(loc) == 2 and loc[0] != loc[1]):
                raise PlanError(f"{self.kind.value} location must be a (from, to) bus pair")
            object.__setattr__(self, "location", (int(loc[0]), int(loc[1])))


@dataclass(frozen=True)
class MeasurementPlan:
    specs: tuple[MeasurementSpec, ...]
    name: str = "custom"

    @property
    def m(self) -> int:
        return len(self.specs)

    def sigmas(self) -> np.ndarray:
        return np.array([s.sigma for s in self.specs])

    def to_json(self, path: str | Path | None = None) -> str:
        payload = {"name": self.name, "specs": [{
            "kind": s.kind.value,
            "location": list(s.location) if isinstance(s.location, tuple) else s.location,
            "sigma": s.sigma,
        } for s in self.specs]}
        text = json.dumps(payload, indent=1) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> "MeasurementPlan":
        text = str(source)
        if isinstance(source, Path) or not text.lstrip().startswith("{"):
            text = Path(source).read_text()
        raw = json.loads(text)
        specs = []
        for rec in raw["specs"]:
            loc = rec["location"]
            specs.append(MeasurementSpec(
                MeasurementKind(rec["kind"]),
                tuple(loc) if isinstance(loc, list) else loc,
                rec["sigma"]))
        return cls(tuple(specs), raw.get("name", "custom"))


@dataclass(frozen=True)
class MeasurementVector:
    """Values for one instant, in plan order; mask marks available entries."""

    timestamp: int
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise ValueError("values and mask must be 1-d arrays of equal length")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def full(cls, timestamp: int, values: np.ndarray) -> "MeasurementVector":
        values = np.asarray(values, dtype=float)
        return cls(timestamp, values, np.ones(values.size, dtype=bool))


class ResolvedPlan:
    """Plan bound to a case: locations resolved to dense indices.

    Flow pairs resolve against the first matching in-service branch; the
    metered end decides which end of the two-port is evaluated.
    """

    def __init__(self, plan: MeasurementPlan, case: NetworkCase, ybus: AdmittanceMatrix | None = None):
        self.plan = plan
        self.case = case
        self.ybus = ybus if ybus is not None else build_ybus(case)
        bus_rows = {k: [] for k in ("vmag", "vang", "pinj", "qinj")}
        bus_pos = {k: [] for k in ("vmag", "vang", "pinj", "qinj")}
        flow_rows = {"p": [], "q": []}
        flow_rec = {"p": [], "q": []}
        flow_from_side = {"p": [], "q": []}
        by_ends: dict[tuple[int, int], int] = {}
        for ridx, rec in enumerate(self.ybus.branch_admittances):
            br = case.branches[rec.index]
            by_ends.setdefault((br.from_bus, br.to_bus), ridx)
        for row, spec in enumerate(plan.specs):
            if spec.kind in _BUS_KINDS:
                if spec.location not in case.internal_index:
                    raise PlanError(f"{spec.kind.value}: unknown bus {spec.location}")
                key = spec.kind.value.lower()
                key = {"vmag": "vmag", "vang": "vang", "pinj": "pinj", "qinj": "qinj"}[key]
                bus_rows[key].append(row)
                bus_pos[key].append(case.internal_index[spec.location])
            else:
                a, b = spec.location
                if (a, b) in by_ends:
                    ridx, from_side = by_ends[(a, b)], True
                elif (b, a) in by_ends:
                    ridx, from_side = by_ends[(b, a)], False
                else:
                    raise PlanError(f"{spec.kind.value}: no in-service branch joins {a} and {b}")
                key = "p" if spec.kind == MeasurementKind.PFLOW else "q"
                flow_rows[key].append(row)
                flow_rec[key].append(ridx)
                flow_from_side[key].append(from_side)
        self._bus_rows = {k: np.array(v, dtype=int) for k, v in bus_rows.items()}
        self._bus_pos = {k: np.array(v, dtype=int) for k, v in bus_pos.items()}
        self._flow_rows = {k: np.array(v, dtype=int) for k, v in flow_rows.items()}
        self._flow_from = {k: np.array(v, dtype=bool) for k, v in flow_from_side.items()}
        recs = self.ybus.branch_admittances
        self._flow_ends = {}
        self._flow_adm = {}
        for key in ("p", "q"):
            idx = flow_rec[key]
            side = self._flow_from[key]
            fpos = np.array([recs[i].from_pos for i in idx], dtype=int)
            tpos = np.array([recs[i].to_pos for i in idx], dtype=int)
            yff = np.array([recs[i].yff for i in idx], dtype=complex)
            yft = np.array([recs[i].yft for i in idx], dtype=complex)
            ytf = np.array([recs[i].ytf for i in idx], dtype=complex)
            ytt = np.array([recs[i].ytt for i in idx], dtype=complex)
            # metered end first: swap ends and use the to-side pair when metered there
            near = np.where(side, fpos, tpos)
            far = np.where(side, tpos, fpos)
            y_nn = np.where(side, yff, ytt)
            y_nf = np.where(side, yft, ytf)
            self._flow_ends[key] = (near, far)
            self._flow_adm[key] = (y_nn, y_nf)

    @property
    def m(self) -> int:
        return self.plan.m

    def state_size(self) -> int:
        return 2 * self.case.n_buses - 1

    def angle_columns(self) -> np.ndarray:
        """Jacobian column index per bus angle; -1 for the slack."""
        n = self.case.n_buses
        slack = self.case.slack_index
        cols = np.full(n, -1, dtype=int)
        k = 0
        for i in range(n):
            if i != slack:
                cols[i] = k
                k += 1
        return cols


def resolve_plan(plan: MeasurementPlan, case: NetworkCase,
                 ybus: AdmittanceMatrix | None = None) -> ResolvedPlan:
    return ResolvedPlan(plan, case, ybus)


def evaluate_h(state: StateVector, resolved: ResolvedPlan) -> np.ndarray:
    """Noise-free measurement values h(x) in plan order."""
    vc = state.complex_voltage()
    s = vc * np.conj(resolved.ybus.matrix @ vc)
    out = np.empty(resolved.m)
    br = resolved._bus_rows
    bp = resolved._bus_pos
    out[br["vmag"]] = state.v[bp["vmag"]]
    out[br["vang"]] = state.theta[bp["vang"]]
    out[br["pinj"]] = s.real[bp["pinj"]]
    out[br["qinj"]] = s.imag[bp["qinj"]]
    for key, take in (("p", np.real), ("q", np.imag)):
        rows = resolved._flow_rows[key]
        if rows.size == 0:
            continue
        near, far = resolved._flow_ends[key]
        y_nn, y_nf = resolved._flow_adm[key]
        s_flow = vc[near] * np.conj(y_nn * vc[near] + y_nf * vc[far])
        out[rows] = take(s_flow)
    return out


def evaluate_jacobian(state: StateVector, resolved: ResolvedPlan) -> np.ndarray:
    """Analytic H = dh/dx, m-by-(2n-1), angle columns first (slack excluded)."""
    case = resolved.case
    n = case.n_buses
    acol = resolved.angle_columns()
    H = np.zeros((resolved.m, 2 * n - 1))
    vc = state.complex_voltage()
    y = resolved.ybus.matrix.toarray()
    ibus = y @ vc
    diag_v = np.diag(vc)
    diag_i = np.diag(ibus)
    diag_e = np.diag(vc / np.abs(vc))
    ds_dva = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
    ds_dvm = diag_v @ np.conj(y @ diag_e) + np.conj(diag_i) @ diag_e

    ang_sel = acol >= 0  # buses owning an angle column
    br = resolved._bus_rows
    bp = resolved._bus_pos
    for key, block, take in (("pinj", ds_dva, np.real), ("qinj", ds_dva, np.imag)):
        rows, pos = br[key], bp[key]
        if rows.size == 0:
            continue
        H[np.ix_(rows, acol[ang_sel])] = take(block[pos][:, ang_sel])
    for key, take in (("pinj", np.real), ("qinj", np.imag)):
        rows, pos = br[key], bp[key]
        if rows.size:
            H[np.ix_(rows, (n - 1) + np.arange(n))] = take(ds_dvm[pos])
    rows, pos = br["vmag"], bp["vmag"]
    H[rows, (n - 1) + pos] = 1.0
    rows, pos = br["vang"], bp["vang"]
    has_col = acol[pos] >= 0  # an angle reading at the slack has a zero row
    H[rows[has_col], acol[pos[has_col]]] = 1.0

    for key, take in (("p", np.real), ("q", np.imag)):
        rows = resolved._flow_rows[key]
        if rows.size == 0:
            continue
        near, far = resolved._flow_ends[key]
        y_nn, y_nf = resolved._flow_adm[key]
        vn, vf = vc[near], vc[far]
        cross = vn * np.conj(vf) * np.conj(y_nf)
        ds_dth_near = 1j * cross
        ds_dth_far = -1j * cross
        ds_dvm_near = 2 * np.abs(vn) * np.conj(y_nn) + (vn / np.abs(vn)) * np.conj(vf) * np.conj(y_nf)
        ds_dvm_far = vn * np.conj(vf / np.abs(vf)) * np.conj(y_nf)
        sel = acol[near] >= 0
        H[rows[sel], acol[near[sel]]] += take(ds_dth_near[sel])
        sel = acol[far] >= 0
        H[rows[sel], acol[far[sel]]] += take(ds_dth_far[sel])
        H[rows, (n - 1) + near] += take(ds_dvm_near)
        H[rows, (n - 1) + far] += take(ds_dvm_far)
    return H


def observability_rank(resolved: ResolvedPlan) -> int:
    """Numerical rank of H at a flat-start state."""
    flat = StateVector(np.ones(resolved.case.n_buses), np.zeros(resolved.case.n_buses))
    return int(np.linalg.matrix_rank(evaluate_jacobian(flat, resolved)))


# --------------------------------------------------------------------- noise

def gaussian_sigma_for_snr(values: np.ndarray, snr_db: float) -> float:
    """Noise standard deviation giving the requested vector-wide SNR."""
    if math.isinf(snr_db):
        return 0.0
    signal_power = float(np.mean(np.square(values)))
    return math.sqrt(signal_power / (10.0 ** (snr_db / 10.0)))


def add_gaussian_noise(values: np.ndarray, snr_db: float,
                       seed: int | np.random.SeedSequence) -> np.ndarray:
    """Additive white Gaussian noise at a vector-wide signal-to-noise ratio.

    The noise variance is chosen so signal power over noise power equals
    10**(snr_db/10) for this vector.  ``snr_db=inf`` returns a copy.
    Deterministic in (values, seed).
    """
    values = np.asarray(values, dtype=float)
    if math.isinf(snr_db):
        return values.copy()
    sigma = gaussian_sigma_for_snr(values, snr_db)
    rng = np.random.Generator(np.random.PCG64(seed))
    return values + sigma * rng.standard_normal(values.size)


def add_bounded_percent_noise(values: np.ndarray, max_pct: float = 0.03,
                              seed: int | np.random.SeedSequence = 0) -> np.ndarray:
    """Bounded percentage noise, non-Gaussian by construction.

    Each entry gets an independent error drawn uniformly from 0 to
    ``max_pct`` of its magnitude; the first half of the vector (plan order,
    odd lengths round up) is perturbed upward, the remainder downward.
    """
    values = np.asarray(values, dtype=float)
    rng = np.random.Generator(np.random.PCG64(seed))
    err = rng.uniform(0.0, max_pct, values.size) * np.abs(values)
    half = math.ceil(values.size / 2)
    signs = np.ones(values.size)
    signs[half:] = -1.0
    return values + signs * err


# -------------------------------------------------------------------- presets

# 32-channel benchmark placement for the 14-bus system.
_MINIMAL14_INJ = (2, 4, 8, 10, 11, 12, 14)
_MINIMAL14_FLOWS = ((1, 2), (2, 3), (2, 5), (5, 6), (4, 7), (6, 11), (6, 13), (12, 13))


def _bus_pair_specs(kind_p, kind_q, locations, sigma):
    return ([MeasurementSpec(kind_p, loc, sigma) for loc in locations]
            + [MeasurementSpec(kind_q, loc, sigma) for loc in locations])


def _minimal14(case: NetworkCase) -> list[MeasurementSpec]:
    slack_id = case.buses[case.slack_index].id
    specs = [MeasurementSpec(MeasurementKind.VMAG, slack_id, SIGMA_VMAG),
             MeasurementSpec(MeasurementKind.VANG, slack_id, SIGMA_VANG)]
    specs += _bus_pair_specs(MeasurementKind.PINJ, MeasurementKind.QINJ,
                             _MINIMAL14_INJ, SIGMA_INJ)
    specs += _bus_pair_specs(MeasurementKind.PFLOW, MeasurementKind.QFLOW,
                             _MINIMAL14_FLOWS, SIGMA_FLOW)
    return specs


def _full14(case: NetworkCase) -> list[MeasurementSpec]:
    slack_id = case.buses[case.slack_index].id
    specs = [MeasurementSpec(MeasurementKind.VMAG, slack_id, SIGMA_VMAG),
             MeasurementSpec(MeasurementKind.VANG, slack_id, SIGMA_VANG)]
    all_buses = [b.id for b in case.buses]
    specs += _bus_pair_specs(MeasurementKind.PINJ, MeasurementKind.QINJ, all_buses, SIGMA_INJ)
    flows = [(br.from_bus, br.to_bus) for br in case.branches if br.in_service][:17]
    specs += _bus_pair_specs(MeasurementKind.PFLOW, MeasurementKind.QFLOW, flows, SIGMA_FLOW)
    return specs


def _bench(case: NetworkCase, target_m: int) -> list[MeasurementSpec]:
    """Deterministic benchmark placement totalling exactly ``target_m``.

    Voltage magnitude and angle at the slack, P/Q injection pairs at every
    other net-load bus in file order, then P/Q flow pairs walking all
    branches from-side first and to-side second until the target is reached.
    """
    slack_id = case.buses[case.slack_index].id
    specs = [MeasurementSpec(MeasurementKind.VMAG, slack_id, SIGMA_VMAG),
             MeasurementSpec(MeasurementKind.VANG, slack_id, SIGMA_VANG)]
    load_buses = [b.id for b in case.buses if b.p_load_mw > 0]
    inj_buses = load_buses[::2]
    remaining = target_m - 2 - 2 * len(inj_buses)
    if remaining < 0 or remaining % 2:
        raise PlanError(f"cannot hit target of {target_m} channels with this placement")
    in_service = [br for br in case.branches if br.in_service]
    ends = ([(br.from_bus, br.to_bus) for br in in_service]
            + [(br.to_bus, br.from_bus) for br in in_service])
    n_flow_pairs = remaining // 2
    if n_flow_pairs > len(ends):
        raise PlanError(f"not enough branch ends for {target_m} channels")
    for bus in inj_buses:
        specs.append(MeasurementSpec(MeasurementKind.PINJ, bus, SIGMA_INJ))
        specs.append(MeasurementSpec(MeasurementKind.QINJ, bus, SIGMA_INJ))
    for pair in ends[:n_flow_pairs]:
        specs.append(MeasurementSpec(MeasurementKind.PFLOW, pair, SIGMA_FLOW))
        specs.append(MeasurementSpec(MeasurementKind.QFLOW, pair, SIGMA_FLOW))
    return specs


_PRESET_TARGETS = {"bench30": 110, "bench57": 216, "bench69": 210, "bench118": 562}


def default_plan(name: str, case: NetworkCase) -> MeasurementPlan:
    """Bundled measurement plans keyed by preset name.

    ``minimal14`` is the 32-channel benchmark placement; ``full14`` extends
    it to 64 channels.  The ``bench*`` presets reproduce the benchmark
    channel counts (110/216/210/562) with the documented deterministic
    placement.
    """
    if name == "minimal14":
        specs = _minimal14(case)
    elif name == "full14":
        specs = _full14(case)
    elif name in _PRESET_TARGETS:
        specs = _bench(case, _PRESET_TARGETS[name])
    else:
        raise PlanError(f"unknown plan preset {name!r}; have minimal14, full14, "
                        f"bench30, bench57, bench69, bench118")
    plan = MeasurementPlan(tuple(specs), name)
    if plan.m < 2 * case.n_buses:
        raise PlanError(f"preset {name} yields m={plan.m} < 2n={2 * case.n_buses}")
    return plan
