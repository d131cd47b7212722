"""Command-line surface: thin handlers over the library functions.

Commands: case validate, profile synth|import, dataset generate, wls solve,
train, estimate, forecast fit|next, evaluate, report.  Configs are TOML;
tabular outputs are CSV, models and manifests JSON.  All commands exit 1
with a one-line message on a toolkit error.
"""
from __future__ import annotations

import json
import time
from pathlib import Path

import click
import numpy as np

from .cases import NetworkCase, load_bundled_case, parse_case
from .dataset import load_dataset
from .ensemble import estimate_batch, load_ensemble
from .errors import GridStateError
from .forecaster import (fit_forecaster, forecast_next, forecaster_from_json,
                         forecaster_to_json)
from .measurement import (MeasurementVector, add_gaussian_noise, default_plan,
                          evaluate_h, resolve_plan)
from .pipeline import (build_profile, config_from_identity, load_case_source,
                       load_config, load_plan_source, prepare_dataset,
                       run_experiment, run_hash, evaluation_measurements,
                       write_metrics)
from .powerflow import LoadScenario, solve_power_flow
from .profiles import import_profile, lag_autocorrelation, save_profile, synth_profile
from .wls import estimate_wls
from .ensemble import evaluate as evaluate_model


def _load_case_arg(source: str) -> NetworkCase:
    if Path(source).exists():
        return parse_case(source)
    return load_bundled_case(source)


def _dataset_bus_ids(ds) -> list:
    """Bus ids for printing; sequential when the source case is unavailable."""
    try:
        return [b.id for b in load_case_source(ds.manifest["case"]).buses]
    except GridStateError:
        return list(range(1, ds.n_buses + 1))


def _echo_state(v: np.ndarray, theta: np.ndarray, bus_ids) -> None:
    click.echo("bus,v_pu,theta_deg")
    for bus, vi, ti in zip(bus_ids, v, np.degrees(theta)):
        click.echo(f"{bus},{vi:.6f},{ti:.4f}")


def _write_state_csv(path: str, v: np.ndarray, theta: np.ndarray, bus_ids) -> None:
    lines = ["bus,v_pu,theta_deg"]
    lines += [f"{bus},{repr(float(vi))},{repr(float(np.degrees(ti)))}"
              for bus, vi, ti in zip(bus_ids, v, theta)]
    Path(path).write_text("\n".join(lines) + "\n")


@click.group()
def cli() -> None:
    """Power-system state estimation toolkit."""


@cli.group()
def case() -> None:
    """Network case utilities."""


@case.command("validate")
@click.argument("source")
def case_validate(source: str) -> None:
    """Validate a bundled case name or a case JSON file."""
    net = _load_case_arg(source)
    sol = solve_power_flow(net, LoadScenario.uniform(net, 1.0))
    click.echo(f"{source}: {net.n_buses} buses, {len(net.branches)} branches, "
               f"slack bus {net.buses[net.slack_index].id}, base {net.base_mva:g} MVA")
    click.echo(f"base-case power flow: converged={sol.converged} "
               f"iterations={sol.iterations} max_mismatch={sol.max_mismatch:.3e}")
    if not sol.converged:
        raise SystemExit(1)


@cli.group()
def profile() -> None:
    """Hourly load profile generation and import."""


@profile.command("synth")
@click.option("--hours", type=int, default=8760, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--noise-amp", type=float, default=0.05, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def profile_synth(hours: int, seed: int, noise_amp: float, out: str) -> None:
    """Generate a seeded synthetic profile and write one value per line."""
    prof = synth_profile(hours, seed, noise_amp=noise_amp)
    save_profile(prof, out)
    click.echo(f"wrote {prof.hours} hourly values to {out} "
               f"(peak 1.0, lag-24 autocorrelation "
               f"{lag_autocorrelation(prof.values, 24):.3f})")


@profile.command("import")
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Re-serialize the validated profile here.")
def profile_import(source: str, out: str | None) -> None:
    """Validate an external profile file (one positive value per line)."""
    prof = import_profile(source)
    if out is not None:
        save_profile(prof, out)
    click.echo(f"{source}: {prof.hours} hourly values, peak normalized, "
               f"sha256 {prof.provenance.get('sha256', 'n/a')}")


@cli.group()
def dataset() -> None:
    """Dataset generation."""


@dataset.command("generate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--force", is_flag=True, help="Regenerate even if up to date.")
def dataset_generate(config_path: str, force: bool) -> None:
    """Generate the labeled dataset for a TOML config."""
    config = load_config(config_path)
    net = load_case_source(config.case_source)
    plan = load_plan_source(config.plan_source, net)
    prof = build_profile(config)
    ds = prepare_dataset(config, net, plan, prof, force=force)
    click.echo(f"dataset ready at {Path(config.output_dir) / 'dataset'}: "
               f"{ds.n_rows} rows, m={ds.m}, "
               f"{len(ds.manifest.get('skipped', []))} hours skipped")


@cli.group()
def wls() -> None:
    """Weighted least squares estimation."""


@wls.command("solve")
@click.option("--case", "case_source", default="ieee14", show_default=True)
@click.option("--plan", "plan_name", default="minimal14", show_default=True)
@click.option("--scale", type=float, default=1.0, show_default=True,
              help="Uniform load scale for the simulated instant.")
@click.option("--snr-db", type=float, default=None,
              help="Add Gaussian measurement noise at this SNR.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def wls_solve(case_source: str, plan_name: str, scale: float,
              snr_db: float | None, seed: int, out: str | None) -> None:
    """Simulate one instant, estimate its state, and print the result."""
    net = _load_case_arg(case_source)
    plan = default_plan(plan_name, net)
    sol = solve_power_flow(net, LoadScenario.uniform(net, scale))
    if not sol.converged:
        raise GridStateError(f"power flow did not converge at scale {scale}")
    resolved = resolve_plan(plan, net)
    z = evaluate_h(sol.state, resolved)
    if snr_db is not None:
        z = add_gaussian_noise(z, snr_db, seed)
    result = estimate_wls(MeasurementVector.full(0, z), resolved)
    click.echo(f"converged={result.converged} iterations={result.iterations} "
               f"objective={result.objective:.6e}")
    bus_ids = [b.id for b in net.buses]
    if out is not None:
        _write_state_csv(out, result.state.v, result.state.theta, bus_ids)
        click.echo(f"wrote state to {out}")
    else:
        _echo_state(result.state.v, result.state.theta, bus_ids)


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--force", is_flag=True, help="Regenerate the dataset.")
def train(config_path: str, force: bool) -> None:
    """Run a full experiment: dataset, ensemble training, evaluation."""
    config = load_config(config_path)
    res = run_experiment(config, force=force)
    e = res.report.ensemble
    click.echo(f"run {res.run} complete in {res.output_dir}")
    click.echo(f"ensemble test metrics: v_rmse {e.v_rmse_pct:.4f}% "
               f"v_mae {e.v_mae_pct:.4f}% theta_rmse {e.theta_rmse_deg:.4f} deg "
               f"theta_mae {e.theta_mae_deg:.4f} deg")


@cli.command("estimate")
@click.option("--model", "model_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--row", type=int, default=-1, show_default=True,
              help="Dataset row to estimate (negative counts from the end).")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def estimate_cmd(model_dir: str, dataset_dir: str, row: int, out: str | None) -> None:
    """Estimate the state for one dataset row with the trained ensemble."""
    model = load_ensemble(model_dir)
    ds = load_dataset(dataset_dir)
    z = ds.z_noisy[row]
    start = time.perf_counter()
    state = estimate_batch(model, z[None, :])[0]
    elapsed_ms = (time.perf_counter() - start) * 1e3
    n = model.n_buses
    bus_ids = _dataset_bus_ids(ds)
    click.echo(f"row t={int(ds.timestamps[row])}, inference {elapsed_ms:.2f} ms")
    if out is not None:
        _write_state_csv(out, state[:n], state[n:], bus_ids)
        click.echo(f"wrote state to {out}")
    else:
        _echo_state(state[:n], state[n:], bus_ids)


@cli.group()
def forecast() -> None:
    """State forecasting over dataset label sequences."""


@forecast.command("fit")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def forecast_fit(dataset_dir: str, out: str) -> None:
    """Fit the lag-24 linear forecaster on a dataset's label sequence."""
    ds = load_dataset(dataset_dir)
    model = fit_forecaster(ds.x_wls)
    forecaster_to_json(model, out)
    click.echo(f"fit forecaster on {ds.n_rows} rows "
               f"({model.n_states} states, horizon {model.horizon}); "
               f"median residual rms {float(np.median(model.residual_rms)):.3e}")
    click.echo(f"wrote model to {out}")


@forecast.command("next")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def forecast_next_cmd(model_path: str, dataset_dir: str, out: str | None) -> None:
    """Forecast the state one hour past the end of a dataset."""
    model = forecaster_from_json(model_path)
    ds = load_dataset(dataset_dir)
    window = ds.x_wls[-(model.horizon + 1):]
    if window.shape[0] < model.horizon + 1:
        raise GridStateError(f"dataset has {ds.n_rows} rows; forecasting needs "
                             f"at least {model.horizon + 1}")
    state = forecast_next(model, window)
    n = state.size // 2
    click.echo(f"forecast for t={int(ds.timestamps[-1]) + 1}")
    bus_ids = _dataset_bus_ids(ds)
    if out is not None:
        _write_state_csv(out, state[:n], state[n:], bus_ids)
        click.echo(f"wrote state to {out}")
    else:
        _echo_state(state[:n], state[n:], bus_ids)


@cli.command("evaluate")
@click.option("--run", "run_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
def evaluate_cmd(run_dir: str) -> None:
    """Recompute test metrics for a completed run directory."""
    run_path = Path(run_dir)
    manifest = json.loads((run_path / "manifest.json").read_text())
    config = config_from_identity(manifest["config"], name=manifest["name"],
                                  output_dir=str(run_path))
    if run_hash(config) != manifest["run"]:
        raise GridStateError("manifest config does not hash to its run id")
    ds = load_dataset(run_path / "dataset")
    model = load_ensemble(run_path / "model")
    z_test = evaluation_measurements(ds, model.split.test, config)
    report = evaluate_model(model, z_test, ds.x_wls[model.split.test])
    write_metrics(run_path / "metrics.csv", report, manifest["run"])
    e = report.ensemble
    click.echo(f"run {manifest['run']}: v_rmse {e.v_rmse_pct:.4f}% "
               f"v_mae {e.v_mae_pct:.4f}% theta_rmse {e.theta_rmse_deg:.4f} deg "
               f"theta_mae {e.theta_mae_deg:.4f} deg")
    click.echo(f"rewrote {run_path / 'metrics.csv'}")


@cli.command("report")
@click.option("--run", "run_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: <run>/report).")
def report_cmd(run_dir: str, out_dir: str | None) -> None:
    """Render figures and a per-bus error table for a completed run."""
    from .report import render_report
    paths = render_report(run_dir, out_dir)
    for p in paths.all():
        click.echo(f"wrote {p}")


def main() -> None:
    try:
        cli(standalone_mode=True)
    except GridStateError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(1)


if __name__ == "__main__":
    main()
