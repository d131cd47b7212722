import numpy as np
import pytest

from gridstate.cases import BusKind, load_bundled_case
from gridstate.powerflow import (LoadScenario, StateVector, injected_power,
                                 scheduled_injection, solve_power_flow,
                                 total_loss)
from gridstate.ybus import build_ybus


@pytest.mark.parametrize("name", ["ieee14", "ieee30", "ieee57", "ieee118",
                                  "radial69"])
def test_base_case_converges(name):
    case = load_bundled_case(name)
    sol = solve_power_flow(case)
    assert sol.converged
    assert sol.max_mismatch < 1e-8
    assert sol.iterations <= 10
    assert np.all(sol.state.v > 0.8) and np.all(sol.state.v < 1.2)
    assert sol.state.theta[case.slack_index] == 0.0


def test_solution_satisfies_bus_equations():
    # converged state must reproduce scheduled P at PV/PQ and Q at PQ buses
    case = load_bundled_case("ieee14")
    sol = solve_power_flow(case)
    p, q = injected_power(sol.state, build_ybus(case))
    p_sched, q_sched = scheduled_injection(case, None)
    for i, bus in enumerate(case.buses):
        if bus.kind != BusKind.SLACK:
            assert abs(p[i] - p_sched[i]) < 1e-10
        if bus.kind == BusKind.PQ:
            assert abs(q[i] - q_sched[i]) < 1e-10
    # slack picks up the network loss on top of the scheduled balance
    assert total_loss(sol.state, build_ybus(case)) > 0.0


def test_pv_buses_hold_setpoint():
    case = load_bundled_case("ieee14")
    sol = solve_power_flow(case)
    for i, bus in enumerate(case.buses):
        if bus.kind in (BusKind.PV, BusKind.SLACK):
            assert sol.state.v[i] == pytest.approx(bus.v_setpoint, abs=1e-12)


def test_load_scaling_moves_the_state():
    case = load_bundled_case("ieee14")
    light = solve_power_flow(case, LoadScenario.uniform(case, 0.5))
    heavy = solve_power_flow(case, LoadScenario.uniform(case, 1.3))
    assert light.converged and heavy.converged
    # heavier loading depresses PQ voltages and widens angle spread
    pq = [i for i, b in enumerate(case.buses) if b.kind == BusKind.PQ]
    assert np.all(heavy.state.v[pq] < light.state.v[pq])
    assert heavy.state.theta.min() < light.state.theta.min()


def test_infeasible_loading_reports_failure():
    # far beyond loadability; must not report success
    case = load_bundled_case("ieee14")
    sol = solve_power_flow(case, LoadScenario.uniform(case, 50.0))
    assert not sol.converged
    assert sol.failure in ("max_iterations", "singular_jacobian")


def test_scenario_validation():
    case = load_bundled_case("ieee14")
    with pytest.raises(ValueError, match="nonnegative"):
        LoadScenario(0, -np.ones(case.n_buses))
    with pytest.raises(ValueError, match="scale"):
        solve_power_flow(case, LoadScenario(0, np.ones(3)))


def test_state_vector_validation():
    with pytest.raises(ValueError, match="positive"):
        StateVector(np.array([1.0, 0.0]), np.zeros(2))
    with pytest.raises(ValueError, match="equal length"):
        StateVector(np.ones(3), np.zeros(2))
    st = StateVector(np.ones(2), np.array([0.0, 0.1]))
    assert np.allclose(st.complex_voltage(), np.exp(1j * st.theta))
