import math

import numpy as np
import pytest

from app.core.exceptions import ConvergenceError, InvalidParameterError
from app.models.fields import MeasureRole, uniform_measure
from app.models.grid import make_grid
from app.models.scenario import FisheryParams
from app.services.logit_dynamics import (
    FlowState,
    alpha_table,
    discounted_logit_solve,
    flow,
    flow_step,
    l1_distance,
    logit_equilibrium,
    logit_map,
    nash_alpha,
    nash_alpha_for_cost,
    quasi_potential,
)
from conftest import fishery_scenario, frozen_scenario


def test_logit_map_constant_utility_is_uniform(grid4):
    scenario = frozen_scenario(grid4, np.tile([1.0, -2.0, 0.5, 3.0], (4, 1)), eta=5.0)
    result = logit_map(uniform_measure(grid4), scenario, grid4)
    np.testing.assert_allclose(result.p, 1.0, rtol=1e-14)
    assert result.role is MeasureRole.MU_T


def test_logit_map_small_eta(grid4, rng):
    scenario = frozen_scenario(grid4, rng.normal(size=(4, 4)), eta=1e-10)
    np.testing.assert_allclose(logit_map(uniform_measure(grid4), scenario, grid4).p, 1.0, atol=1e-9)


def test_logit_map_two_cells(grid2x1):
    scenario = frozen_scenario(grid2x1, np.array([[0.0], [math.log(2.0)]]), eta=1.0)
    result = logit_map(uniform_measure(grid2x1), scenario, grid2x1)
    np.testing.assert_allclose(result.p[:, 0], [2 / 3, 4 / 3], rtol=1e-14)


def test_logit_map_uses_coupled_utility(grid4):
    scenario = fishery_scenario(grid4, 0.5, 2.0, theta=0.3)
    result = logit_map(uniform_measure(grid4), scenario, grid4)
    np.testing.assert_allclose(result.column_mass(), 1.0, atol=1e-12)
    # gain at alpha = 0.5 is below every cost, so mass shifts to small actions
    assert np.all(result.p[0] > result.p[-1])


class TestFlowStep:
    def test_equilibrium_is_fixed(self, grid4, rng):
        scenario = frozen_scenario(grid4, rng.normal(size=(4, 4)), eta=2.0)
        target = logit_map(uniform_measure(grid4), scenario, grid4)
        state = flow_step(FlowState(p=target), 0.5, scenario, grid4)
        np.testing.assert_allclose(state.p.p, target.p, atol=1e-12)
        assert state.t == 0.5

    def test_unit_step_is_best_response(self, grid4, rng):
        scenario = frozen_scenario(grid4, rng.normal(size=(4, 4)), eta=2.0)
        start = FlowState(p=uniform_measure(grid4, role=MeasureRole.MU_T))
        state = flow_step(start, 1.0, scenario, grid4)
        np.testing.assert_allclose(state.p.p, logit_map(start.p, scenario, grid4).p, rtol=1e-14)

    def test_convex_combination(self, grid4, rng):
        scenario = frozen_scenario(grid4, rng.normal(size=(4, 4)), eta=2.0)
        start = FlowState(p=uniform_measure(grid4, role=MeasureRole.MU_T))
        target = logit_map(start.p, scenario, grid4).p
        state = flow_step(start, 0.3, scenario, grid4)
        np.testing.assert_allclose(state.p.p, 0.7 * 1.0 + 0.3 * target, rtol=1e-14)

    def test_mass_and_sign_preserved(self, rng):
        grid = make_grid(24, 6)
        scenario = fishery_scenario(grid, 0.5, 200.0, theta=0.25)
        state = FlowState(p=uniform_measure(grid, role=MeasureRole.MU_T))
        for _ in range(20):
            state = flow_step(state, 1.0, scenario, grid)
            assert np.all(state.p.p >= 0)
            np.testing.assert_allclose(state.p.column_mass(), 1.0, atol=1e-12)

    @pytest.mark.parametrize("dtau", [0.0, -0.1, 1.5])
    def test_rejects_bad_step(self, grid4, dtau):
        scenario = fishery_scenario(grid4, 0.5, 2.0)
        with pytest.raises(InvalidParameterError):
            flow_step(FlowState(p=uniform_measure(grid4)), dtau, scenario, grid4)


def test_flow_records_snapshots(grid4):
    scenario = fishery_scenario(grid4, 0.5, 2.0)
    trajectory = flow(FlowState(p=uniform_measure(grid4, role=MeasureRole.MU_T)), 0.25, 10, scenario, grid4,
                      record_every=4)
    assert trajectory.times == pytest.approx([0.0, 1.0, 2.0, 2.5])
    assert len(trajectory.alphas) == 4
    assert trajectory.state.t == pytest.approx(2.5)
    np.testing.assert_allclose(trajectory.alphas[0], 0.5, atol=1e-15)


class TestLogitEquilibrium:
    def test_frozen_utility_one_unit_step(self, grid4, rng):
        scenario = frozen_scenario(grid4, rng.normal(size=(4, 4)), eta=2.0)
        result = logit_equilibrium(scenario, grid4, tol=1e-12, max_steps=10, dtau=1.0)
        assert result.steps == 1
        assert result.residual <= 1e-12

    def test_residual_reverified(self):
        grid = make_grid(16, 8)
        scenario = fishery_scenario(grid, 0.5, 2.0, theta=0.5)
        result = logit_equilibrium(scenario, grid, tol=1e-11, max_steps=10_000)
        independent = logit_map(result.p, scenario, grid)
        assert np.max(np.abs(independent.p - result.p.p)) <= 1e-11

    def test_max_steps_exceeded(self):
        grid = make_grid(16, 4)
        scenario = fishery_scenario(grid, 0.5, 2.0)
        with pytest.raises(ConvergenceError) as excinfo:
            logit_equilibrium(scenario, grid, tol=1e-14, max_steps=2)
        assert excinfo.value.diagnostics["steps"] == 2

    def test_rejects_nonpositive_tol(self, grid4):
        with pytest.raises(InvalidParameterError):
            logit_equilibrium(fishery_scenario(grid4, 0.5, 2.0), grid4, tol=0.0)

    def test_sharp_equilibrium_near_nash(self):
        grid = make_grid(64, 16)
        scenario = fishery_scenario(grid, 0.5, 200.0)
        result = logit_equilibrium(scenario, grid, tol=1e-10, max_steps=200_000, dtau=0.02)
        nash = nash_alpha(grid.y_centers, FisheryParams())
        away = np.abs(grid.y_centers - 0.5) >= 0.2
        assert np.max(np.abs(result.alpha[away] - nash[away])) <= 0.05


class TestDiscountedLogit:
    def test_large_delta_recovers_mu0(self, grid4):
        scenario = fishery_scenario(grid4, 1e9, 2.0)
        result = discounted_logit_solve(scenario, grid4, tol=1e-10, max_steps=1000)
        np.testing.assert_allclose(result.m.p, scenario.mu0.p, atol=1e-8)

    def test_frozen_utility_affine_fixed_point(self, grid4, rng):
        u = rng.normal(size=(4, 4))
        scenario = frozen_scenario(grid4, u, delta=1.0, eta=2.0)
        result = discounted_logit_solve(scenario, grid4, tol=1e-14, max_steps=10, omega=1.0)
        target = logit_map(uniform_measure(grid4), scenario, grid4).p
        assert result.steps == 1
        np.testing.assert_allclose(result.m.p, 0.5 * 1.0 + 0.5 * target, rtol=1e-14)
        assert result.m.role is MeasureRole.M

    def test_rejects_bad_omega(self, grid4):
        with pytest.raises(InvalidParameterError):
            discounted_logit_solve(fishery_scenario(grid4, 0.5, 2.0), grid4, omega=0.0)

    def test_max_steps_exceeded(self):
        grid = make_grid(16, 4)
        with pytest.raises(ConvergenceError):
            discounted_logit_solve(fishery_scenario(grid, 0.5, 2.0), grid, tol=1e-14, max_steps=1)

    @pytest.mark.slow
    def test_case_d_tracks_nash(self):
        grid = make_grid(128, 128)
        scenario = fishery_scenario(grid, 0.005, 200.0)
        result = discounted_logit_solve(scenario, grid, tol=1e-10, max_steps=500_000, omega=0.02)
        nash = nash_alpha(grid.y_centers, FisheryParams())
        away = np.abs(grid.y_centers - 0.5) >= 0.2
        assert np.max(np.abs(result.alpha[away] - nash[away])) <= 0.05


@pytest.mark.parametrize("eta, step, graphon", [
    (2.0, 0.5, None),
    (2.0, 0.5, 0.5),
    pytest.param(200.0, 0.02, None, marks=pytest.mark.slow),
    pytest.param(200.0, 0.02, 0.5, marks=pytest.mark.slow),
])
def test_small_delta_discounted_logit_matches_logit_equilibrium(eta, step, graphon):
    grid = make_grid(64, 64)
    scenario = fishery_scenario(grid, 1e-4, eta, theta=graphon)
    discounted = discounted_logit_solve(scenario, grid, tol=1e-11, max_steps=500_000, omega=step)
    classical = logit_equilibrium(scenario, grid, tol=1e-11, max_steps=500_000, dtau=step)
    assert np.max(l1_distance(discounted.m.p, classical.p.p, grid)) <= 1e-2


@pytest.mark.parametrize("c, expected", [(math.sqrt(2.0), 0.5), (math.sqrt(10.0), 0.1), (0.5, 1.0)])
def test_nash_alpha_values(c, expected):
    params = FisheryParams(c0=c, c1=c)
    assert nash_alpha(0.3, params) == pytest.approx(expected, rel=1e-12)
    assert nash_alpha_for_cost(c) == pytest.approx(expected, rel=1e-12)


def test_nash_alpha_brute_force(rng):
    alphas = np.linspace(0.0, 1.0, 100_001)
    for c in rng.uniform(0.2, 5.0, size=50):
        scanned = alphas[np.argmax(quasi_potential(alphas, c))]
        assert abs(scanned - nash_alpha_for_cost(c)) <= 1e-4


def test_nash_alpha_rejects_nonpositive_cost():
    with pytest.raises(InvalidParameterError):
        nash_alpha_for_cost(0.0)
    with pytest.raises(InvalidParameterError):
        nash_alpha(0.5, FisheryParams(c0=0.0, c1=0.0))


def test_alpha_table_columns(grid4):
    scenario = fishery_scenario(grid4, 0.5, 2.0)
    y, alpha, nash = alpha_table(scenario, grid4, np.full(4, 0.3))
    np.testing.assert_array_equal(y, grid4.y_centers)
    np.testing.assert_allclose(nash, nash_alpha(grid4.y_centers, FisheryParams()))
