import numpy as np
import pytest

from gridstate.cases import load_bundled_case
from gridstate.errors import MaskedMeasurementError, SingularGainError
from gridstate.measurement import (MeasurementKind, MeasurementPlan,
                                   MeasurementSpec, MeasurementVector,
                                   add_gaussian_noise, default_plan,
                                   evaluate_h, evaluate_jacobian,
                                   gaussian_sigma_for_snr, resolve_plan)
from gridstate.powerflow import solve_power_flow
from gridstate.wls import estimate_wls, objective, weight_vector

CASES = [("ieee14", "minimal14"), ("ieee30", "bench30"),
         ("ieee57", "bench57"), ("ieee118", "bench118"),
         ("radial69", "bench69")]


@pytest.mark.parametrize("case_name,preset", CASES)
def test_noiseless_measurements_recover_the_true_state(case_name, preset):
    case = load_bundled_case(case_name)
    sol = solve_power_flow(case)
    assert sol.converged
    resolved = resolve_plan(default_plan(preset, case), case)
    z = MeasurementVector.full(0, evaluate_h(sol.state, resolved))
    est = estimate_wls(z, resolved)
    assert est.converged and est.iterations <= 10
    assert np.max(np.abs(est.state.v - sol.state.v)) < 1e-6
    assert np.max(np.abs(est.state.theta - sol.state.theta)) < 1e-6
    assert est.objective < 1e-10


def test_objective_history_is_monotone(z_clean14, resolved14):
    zn = add_gaussian_noise(z_clean14, 50.0, 42)
    est = estimate_wls(MeasurementVector.full(0, zn), resolved14)
    assert est.converged
    hist = np.array(est.objective_history)
    assert hist.size == est.iterations + 1
    assert np.all(np.diff(hist) <= 1e-12)
    assert est.objective == hist[-1]


def test_first_order_condition_at_the_solution(z_clean14, resolved14):
    zn = add_gaussian_noise(z_clean14, 50.0, 42)
    est = estimate_wls(MeasurementVector.full(0, zn), resolved14)
    H = evaluate_jacobian(est.state, resolved14)
    w = weight_vector(resolved14.plan)
    grad = H.T @ (w * (zn - evaluate_h(est.state, resolved14)))
    assert np.max(np.abs(grad)) < 1e-3  # weights ~1e4 scale the gradient


def test_weighted_residual_is_chi_square_distributed(ieee14, z_clean14,
                                                     resolved14):
    # r'Wr at the optimum ~ chi2(m - (2n-1)) when sigmas match the noise
    sigma = gaussian_sigma_for_snr(z_clean14, 50.0)
    specs = tuple(MeasurementSpec(s.kind, s.location, sigma)
                  for s in resolved14.plan.specs)
    resolved = resolve_plan(MeasurementPlan(specs, "chi2"), ieee14)
    dof = resolved.m - (2 * ieee14.n_buses - 1)
    trials = 1000
    vals = []
    for trial in range(trials):
        zt = add_gaussian_noise(z_clean14, 50.0, 10_000 + trial)
        est = estimate_wls(MeasurementVector.full(0, zt), resolved)
        assert est.converged
        vals.append(est.residual_norm ** 2)
    band = 3 * np.sqrt(2 * dof / trials)  # 3 standard errors of the mean
    assert np.mean(vals) == pytest.approx(dof, abs=band)


def test_masked_entries_are_rejected(z_clean14, resolved14):
    mask = np.ones(resolved14.m, dtype=bool)
    mask[3] = False
    with pytest.raises(MaskedMeasurementError, match="pseudo-measurement"):
        estimate_wls(MeasurementVector(0, z_clean14, mask), resolved14)


def test_underdetermined_plan_raises_singular_gain(ieee14, z_clean14,
                                                   resolved14):
    keep = 2 * ieee14.n_buses - 2  # one short of observability
    small = MeasurementPlan(tuple(resolved14.plan.specs[:keep]), "under")
    with pytest.raises(SingularGainError):
        estimate_wls(MeasurementVector.full(0, z_clean14[:keep]),
                     resolve_plan(small, ieee14))


def test_uniform_sigma_scaling_leaves_the_estimate_unchanged(ieee14, z_clean14,
                                                             resolved14):
    zn = add_gaussian_noise(z_clean14, 50.0, 42)
    base = estimate_wls(MeasurementVector.full(0, zn), resolved14)
    scaled = MeasurementPlan(tuple(
        MeasurementSpec(s.kind, s.location, 7.0 * s.sigma)
        for s in resolved14.plan.specs), "scaled")
    est = estimate_wls(MeasurementVector.full(0, zn),
                       resolve_plan(scaled, ieee14))
    assert np.max(np.abs(est.state.v - base.state.v)) < 1e-8
    assert np.max(np.abs(est.state.theta - base.state.theta)) < 1e-8


def test_objective_arithmetic_on_one_channel(ieee14, solved14):
    # residual 0.1 at sigma 0.1 contributes (1/2)(0.1/0.1)^2 = 0.5
    plan = MeasurementPlan((MeasurementSpec(MeasurementKind.VMAG, 1, 0.1),))
    resolved = resolve_plan(plan, ieee14)
    z = evaluate_h(solved14.state, resolved) + 0.1
    assert objective(z, solved14.state, resolved) == pytest.approx(0.5, abs=1e-12)


def test_plain_array_input_is_accepted(z_clean14, resolved14):
    est = estimate_wls(MeasurementVector.full(0, z_clean14), resolved14)
    est2 = estimate_wls(z_clean14, resolved14)
    assert np.array_equal(est.state.v, est2.state.v)
    assert np.array_equal(est.state.theta, est2.state.theta)
