"""Dataset generation: scaled power flows, noisy measurements, WLS labels.

Each profile hour scales the case loads, solves a power flow, evaluates the
measurement plan, corrupts it with seeded noise, and labels the row with the
WLS estimate from the noisy vector.  Rows whose power flow or WLS fails to
converge are skipped and logged; too many skips abort generation.

Datasets persist as a directory of two delimited files sharing the header
``t,z_1..z_m,v_1..v_n,theta_1..theta_n`` (rows.csv carries noisy
measurements and WLS labels, truth.csv clean measurements and true states)
plus a manifest.  Floats are written with repr so round-trips are lossless.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cases import NetworkCase
from .errors import DatasetError, SingularGainError
from .measurement import (MeasurementPlan, MeasurementVector,
                          add_bounded_percent_noise, add_gaussian_noise,
                          evaluate_h, resolve_plan)
from .powerflow import LoadScenario, solve_power_flow
from .profiles import LoadProfile
from .seeds import ROLE_NOISE, derive_seed
from .wls import estimate_wls

logger = logging.getLogger(__name__)

MAX_SKIP_FRACTION = 0.05
DATASET_FORMAT = "gridstate-dataset"
DATASET_VERSION = 1
NOISE_KINDS = ("gaussian", "bounded", "none")


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement corruption: Gaussian by SNR, bounded-percent, or none."""

    kind: str = "gaussian"
    snr_db: float = 50.0
    max_pct: float = 0.03

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}")

    def apply(self, values: np.ndarray, seed: int) -> np.ndarray:
        if self.kind == "gaussian":
            return add_gaussian_noise(values, self.snr_db, seed)
        if self.kind == "bounded":
            return add_bounded_percent_noise(values, self.max_pct, seed)
        return values.copy()


@dataclass
class Dataset:
    """Aligned per-hour arrays; states are (v_1..v_n, theta_1..theta_n)."""

    case_name: str
    plan_name: str
    timestamps: np.ndarray
    z_clean: np.ndarray
    z_noisy: np.ndarray
    x_true: np.ndarray
    x_wls: np.ndarray
    manifest: dict

    @property
    def n_rows(self) -> int:
        return self.timestamps.size

    @property
    def m(self) -> int:
        return self.z_clean.shape[1]

    @property
    def n_buses(self) -> int:
        return self.x_true.shape[1] // 2


def _generate_hours(case: NetworkCase, plan: MeasurementPlan,
                    hours: list[int], scales: list[float], noise: NoiseSpec,
                    seed: int) -> list[tuple]:
    """Rows for one chunk of hours; (t, None, reason) marks a skip."""
    resolved = resolve_plan(plan, case)
    out = []
    for t, scale in zip(hours, scales):
        sol = solve_power_flow(case, LoadScenario(t, scale))
        if not sol.converged:
            out.append((t, None, f"power flow {sol.failure}"))
            continue
        z_clean = evaluate_h(sol.state, resolved)
        z_noisy = noise.apply(z_clean, derive_seed(seed, ROLE_NOISE, t))
        try:
            est = estimate_wls(MeasurementVector.full(t, z_noisy), resolved)
        except SingularGainError as exc:
            out.append((t, None, f"wls singular gain: {exc}"))
            continue
        if not est.converged:
            out.append((t, None, "wls did not converge"))
            continue
        x_true = np.concatenate([sol.state.v, sol.state.theta])
        x_wls = np.concatenate([est.state.v, est.state.theta])
        out.append((t, (z_clean, z_noisy, x_true, x_wls), None))
    return out


def generate_dataset(case: NetworkCase, plan: MeasurementPlan,
                     profile: LoadProfile, noise: NoiseSpec, seed: int, *,
                     case_name: str = "custom", workers: int = 1) -> Dataset:
    """Build a dataset over every profile hour; parallel when workers > 1.

    Per-hour noise streams derive from (seed, hour) so row content does not
    depend on chunking or execution order.
    """
    hours = list(range(profile.hours))
    scales = [float(s) for s in profile.values]
    if workers > 1:
        n_chunks = min(workers * 4, len(hours))
        bounds = np.linspace(0, len(hours), n_chunks + 1).astype(int)
        chunks = [(hours[a:b], scales[a:b]) for a, b in zip(bounds, bounds[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_generate_hours, case, plan, hs, ss, noise, seed)
                       for hs, ss in chunks]
            results = [row for fut in futures for row in fut.result()]
    else:
        results = _generate_hours(case, plan, hours, scales, noise, seed)
    results.sort(key=lambda rec: rec[0])

    kept = [rec for rec in results if rec[1] is not None]
    skipped = [(rec[0], rec[2]) for rec in results if rec[1] is None]
    for t, reason in skipped:
        logger.warning("hour %d skipped: %s", t, reason)
    if len(skipped) > MAX_SKIP_FRACTION * len(hours):
        raise DatasetError(
            f"{len(skipped)} of {len(hours)} hours failed to converge "
            f"(limit {MAX_SKIP_FRACTION:.0%}); the profile and case are "
            "likely mismatched")
    if not kept:
        raise DatasetError("no hours survived generation")

    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "case": case_name,
        "plan": plan.name,
        "seed": int(seed),
        "noise": {"kind": noise.kind, "snr_db": noise.snr_db,
                  "max_pct": noise.max_pct},
        "profile": profile.provenance,
        "hours": len(hours),
        "rows": len(kept),
        "skipped": [{"hour": t, "reason": r} for t, r in skipped],
        "m": plan.m,
        "n_buses": case.n_buses,
    }
    return Dataset(
        case_name=case_name,
        plan_name=plan.name,
        timestamps=np.array([rec[0] for rec in kept], dtype=int),
        z_clean=np.array([rec[1][0] for rec in kept]),
        z_noisy=np.array([rec[1][1] for rec in kept]),
        x_true=np.array([rec[1][2] for rec in kept]),
        x_wls=np.array([rec[1][3] for rec in kept]),
        manifest=manifest,
    )


def dataset_header(m: int, n_buses: int) -> str:
    return ",".join(["t"]
                    + [f"z_{k}" for k in range(1, m + 1)]
                    + [f"v_{k}" for k in range(1, n_buses + 1)]
                    + [f"theta_{k}" for k in range(1, n_buses + 1)])


def _write_rows(path: Path, header: str, timestamps: np.ndarray,
                z: np.ndarray, x: np.ndarray, run_hash: str | None) -> None:
    lines = []
    if run_hash is not None:
        lines.append(f"# run {run_hash}")
    lines.append(header)
    for t, zrow, xrow in zip(timestamps, z, x):
        fields = [str(int(t))]
        fields += [repr(float(v)) for v in zrow]
        fields += [repr(float(v)) for v in xrow]
        lines.append(",".join(fields))
    path.write_text("\n".join(lines) + "\n")


def save_dataset(ds: Dataset, directory: str | Path,
                 run_hash: str | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = dataset_header(ds.m, ds.n_buses)
    _write_rows(directory / "rows.csv", header, ds.timestamps,
                ds.z_noisy, ds.x_wls, run_hash)
    _write_rows(directory / "truth.csv", header, ds.timestamps,
                ds.z_clean, ds.x_true, run_hash)
    manifest = dict(ds.manifest)
    if run_hash is not None:
        manifest["run"] = run_hash
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def _read_rows(path: Path, m: int, n_buses: int):
    lines = [ln for ln in path.read_text().splitlines()
             if ln and not ln.startswith("#")]
    if lines[0] != dataset_header(m, n_buses):
        raise DatasetError(f"{path}: unexpected header")
    ts, zs, xs = [], [], []
    width = 2 * n_buses
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 1 + m + width:
            raise DatasetError(f"{path}: row has {len(parts)} fields, "
                               f"expected {1 + m + width}")
        ts.append(int(parts[0]))
        zs.append([float(p) for p in parts[1:1 + m]])
        xs.append([float(p) for p in parts[1 + m:]])
    return np.array(ts, dtype=int), np.array(zs), np.array(xs)


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{directory} does not contain a dataset")
    if manifest.get("version") != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {manifest.get('version')}")
    m, n_buses = manifest["m"], manifest["n_buses"]
    ts_n, z_noisy, x_wls = _read_rows(directory / "rows.csv", m, n_buses)
    ts_c, z_clean, x_true = _read_rows(directory / "truth.csv", m, n_buses)
    if not np.array_equal(ts_n, ts_c):
        raise DatasetError("rows.csv and truth.csv timestamps disagree")
    return Dataset(
        case_name=manifest["case"],
        plan_name=manifest["plan"],
        timestamps=ts_n,
        z_clean=z_clean,
        z_noisy=z_noisy,
        x_true=x_true,
        x_wls=x_wls,
        manifest=manifest,
    )
