"""Run-report rendering: figures plus a per-bus error table.

Reads a completed run directory (manifest, dataset, trained model), replays
the seeded test-time noise, and writes PNG figures alongside report.csv.
Every output file carries the run hash: the CSV as a leading comment line,
the PNGs in a footer annotation and in the image metadata.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset import load_dataset
from .ensemble import estimate_batch, load_ensemble, state_metrics
from .errors import ConfigError
from .pipeline import (config_from_identity, load_case_source, run_hash,
                       evaluation_measurements)


@dataclass(frozen=True)
class ReportPaths:
    table: Path
    figures: tuple[Path, ...]

    def all(self) -> tuple[Path, ...]:
        return (self.table,) + self.figures


def per_bus_errors(predicted: np.ndarray, actual: np.ndarray,
                   n_buses: int) -> tuple[np.ndarray, np.ndarray]:
    """Signed errors per row and bus: voltage in percent, angle in degrees."""
    dv = (predicted[:, :n_buses] - actual[:, :n_buses]) * 100.0
    dth = np.degrees(predicted[:, n_buses:] - actual[:, n_buses:])
    return dv, dth


def _stamp(fig, run: str) -> None:
    fig.text(0.995, 0.005, f"run {run}", ha="right", va="bottom",
             fontsize=7, color="0.45")


def _save(fig, path: Path, run: str) -> None:
    _stamp(fig, run)
    fig.savefig(path, dpi=120, metadata={"Description": f"run {run}"})
    plt.close(fig)


def _trace_figure(hours, pred, labels, bus_ids, n_buses, run, path):
    picks = [0, n_buses // 2, n_buses - 1]
    fig, (ax_v, ax_t) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    for j in picks:
        line, = ax_v.plot(hours, pred[:, j], lw=1.0,
                          label=f"bus {bus_ids[j]} estimate")
        ax_v.plot(hours, labels[:, j], ".", ms=2.5, color=line.get_color(),
                  alpha=0.6, label=f"bus {bus_ids[j]} label")
        ax_t.plot(hours, np.degrees(pred[:, n_buses + j]), lw=1.0,
                  color=line.get_color())
        ax_t.plot(hours, np.degrees(labels[:, n_buses + j]), ".", ms=2.5,
                  color=line.get_color(), alpha=0.6)
    ax_v.set_ylabel("voltage magnitude (pu)")
    ax_t.set_ylabel("voltage angle (deg)")
    ax_t.set_xlabel("hour")
    ax_v.legend(fontsize=7, ncol=3)
    ax_v.set_title("ensemble estimate vs labels, held-out hours")
    fig.tight_layout()
    _save(fig, path, run)


def _bus_bar_figure(dv, dth, bus_ids, run, path):
    v_rmse = np.sqrt(np.mean(dv ** 2, axis=0))
    t_rmse = np.sqrt(np.mean(dth ** 2, axis=0))
    x = np.arange(len(bus_ids))
    fig, (ax_v, ax_t) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    ax_v.bar(x, v_rmse, color="tab:blue")
    ax_v.set_ylabel("voltage RMSE (%)")
    ax_t.bar(x, t_rmse, color="tab:orange")
    ax_t.set_ylabel("angle RMSE (deg)")
    ax_t.set_xticks(x, [str(b) for b in bus_ids])
    ax_t.set_xlabel("bus")
    ax_v.set_title("per-bus test error")
    fig.tight_layout()
    _save(fig, path, run)


def _histogram_figure(dv, dth, run, path):
    fig, (ax_v, ax_t) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_v.hist(dv.ravel(), bins=60, color="tab:blue")
    ax_v.set_xlabel("voltage error (%)")
    ax_v.set_ylabel("count")
    ax_t.hist(dth.ravel(), bins=60, color="tab:orange")
    ax_t.set_xlabel("angle error (deg)")
    fig.suptitle("test error distribution, all buses and hours")
    fig.tight_layout()
    _save(fig, path, run)


def _write_table(path: Path, dv, dth, bus_ids, overall, run: str) -> None:
    lines = [f"# run {run}", "bus,v_rmse_pct,v_mae_pct,theta_rmse_deg,theta_mae_deg"]
    for j, bus in enumerate(bus_ids):
        lines.append(",".join([str(bus)] + [
            repr(float(v)) for v in (
                np.sqrt(np.mean(dv[:, j] ** 2)), np.mean(np.abs(dv[:, j])),
                np.sqrt(np.mean(dth[:, j] ** 2)), np.mean(np.abs(dth[:, j])))]))
    lines.append(",".join(["all"] + [
        repr(float(v)) for v in (overall.v_rmse_pct, overall.v_mae_pct,
                                 overall.theta_rmse_deg, overall.theta_mae_deg)]))
    path.write_text("\n".join(lines) + "\n")


def render_report(run_dir: str | Path,
                  out_dir: str | Path | None = None) -> ReportPaths:
    """Render figures and report.csv for a completed run directory."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no run manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    config = config_from_identity(manifest["config"], name=manifest["name"],
                                  output_dir=str(run_dir))
    run = manifest["run"]
    if run_hash(config) != run:
        raise ConfigError(f"manifest at {manifest_path} is internally "
                          "inconsistent: config does not hash to its run id")
    ds = load_dataset(run_dir / "dataset")
    model = load_ensemble(run_dir / "model")
    case = load_case_source(config.case_source)
    bus_ids = [b.id for b in case.buses]

    order = np.argsort(ds.timestamps[model.split.test])
    idx = model.split.test[order]
    z = evaluation_measurements(ds, idx, config)
    pred = estimate_batch(model, z)
    labels = ds.x_wls[idx]
    dv, dth = per_bus_errors(pred, labels, ds.n_buses)
    overall = state_metrics(pred, labels, ds.n_buses)

    out = Path(out_dir) if out_dir is not None else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    # keep traces legible: at most the first week of held-out hours
    shown = min(len(idx), 168)
    hours = ds.timestamps[idx][:shown]
    figures = (out / "voltage_traces.png", out / "error_by_bus.png",
               out / "error_distribution.png")
    _trace_figure(hours, pred[:shown], labels[:shown], bus_ids, ds.n_buses,
                  run, figures[0])
    _bus_bar_figure(dv, dth, bus_ids, run, figures[1])
    _histogram_figure(dv, dth, run, figures[2])
    table = out / "report.csv"
    _write_table(table, dv, dth, bus_ids, overall, run)
    return ReportPaths(table, figures)
