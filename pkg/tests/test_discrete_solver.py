import math

import numpy as np
import pytest

from treesir.discrete_solver import (
    DiscreteModelSpec,
    bernoulli_ode_solve,
    closed_form_no_recovery,
    deterministic_recovery_dde_solve,
    effective_two_state_solve,
    expected_susceptible_curve,
    exponential_recovery_ode_solve,
    logistic_limit_curve,
    observed_order,
    reference_values,
    root_tail_curve,
    scaled_spec,
    solve_s,
    survival_curve,
)
from treesir.errors import DomainError, GridAlignmentError, PreconditionError
from treesir.grid import TimeGrid, max_abs_diff
from treesir.ratekit import RateFunction, RecoveryDistribution


def make_spec(n, eps, lam, recovery=None, p=0.0):
    return DiscreteModelSpec(
        n, p, RateFunction.constant(eps), RateFunction.constant(lam), recovery or RecoveryDistribution.never()
    )


def n4_value():
    # n = 4, eps = 1, lambda = 0.5 at t = 1
    return (3.5 / (3.0 * math.exp(-0.5) + 0.5 * math.exp(3.0))) ** (1.0 / 3.0)


class TestModelSpec:
    def test_p_one_is_rejected(self):
        with pytest.raises(PreconditionError, match="starting susceptible"):
            make_spec(2, 1.0, 1.0, p=1.0)

    @pytest.mark.parametrize("n", [0, -1, 1.5, True])
    def test_degree_must_be_an_integer(self, n):
        with pytest.raises(PreconditionError):
            make_spec(n, 1.0, 1.0)

    def test_scaled_spec_divides_eps_by_the_degree(self):
        spec = make_spec(2, 3.0, 1.0)
        assert spec.degree == 3
        assert scaled_spec(spec).eps.constant_value == pytest.approx(1.0)


class TestClosedForm:
    def test_n_one_branch(self):
        traj = closed_form_no_recovery(1, 1.0, 1.0, TimeGrid(1.0, 0.5))
        assert traj["s"][-1] == pytest.approx(math.exp(-math.exp(-1.0)), abs=1e-12)
        assert traj["s"][-1] == pytest.approx(0.69220, abs=1e-5)
        assert traj["survival"][-1] == pytest.approx(math.exp(-1.0) * math.exp(-2.0 * math.exp(-1.0)), abs=1e-12)

    def test_general_branch(self):
        traj = closed_form_no_recovery(4, 1.0, 0.5, TimeGrid(1.0, 0.5))
        assert traj["s"][0] == 1.0
        assert traj["s"][-1] == pytest.approx(n4_value(), abs=1e-12)
        assert traj["s"][-1] == pytest.approx(0.66573, abs=1e-5)

    def test_rates_must_be_positive(self):
        with pytest.raises(DomainError):
            closed_form_no_recovery(2, 1.0, 0.0, TimeGrid(1.0, 0.5))

    def test_logistic_limit(self):
        traj = logistic_limit_curve(1.0, 1.0, TimeGrid(40.0, 1.0))
        assert traj["infected"][0] == pytest.approx(0.0, abs=1e-15)
        assert traj["infected"][1] == pytest.approx(math.tanh(1.0))
        assert traj["infected"][-1] == pytest.approx(1.0)


class TestSolveS:
    def test_initial_value_and_metadata(self):
        traj = solve_s(make_spec(2, 1.0, 0.5), TimeGrid(1.0, 0.1))
        assert traj["s"][0] == 1.0
        assert traj.meta["clamped"] == 0
        assert traj.meta["max_iterations"] >= 1

    def test_zero_rate_keeps_every_direction_silent(self):
        traj = solve_s(make_spec(3, 0.0, 1.0), TimeGrid(2.0, 0.1))
        assert np.all(traj["s"] == 1.0)

    def test_empty_epidemic_never_infects(self):
        traj = survival_curve(make_spec(2, 0.0, 0.0), TimeGrid(2.0, 0.1))
        assert np.all(traj["survival"] == 1.0)

    def test_no_seed_no_self_infection(self):
        traj = survival_curve(make_spec(2, 1.0, 0.0), TimeGrid(2.0, 1e-3))
        assert np.max(np.abs(traj["survival"] - 1.0)) < 1e-5

    def test_survival_starts_at_one_minus_p(self):
        traj = survival_curve(make_spec(2, 1.0, 0.5, p=0.2), TimeGrid(1.0, 0.1))
        assert traj["survival"][0] == pytest.approx(0.8)

    @pytest.mark.parametrize("n, eps, lam", [(1, 1.0, 1.0), (2, 1.0, 0.5), (4, 1.0, 0.5)])
    def test_agrees_with_closed_form(self, n, eps, lam):
        grid = TimeGrid(10.0, 1e-3)
        solved = survival_curve(make_spec(n, eps, lam), grid)
        exact = closed_form_no_recovery(n, eps, lam, grid)
        assert max_abs_diff(solved["s"], exact["s"]) < 1e-6
        assert max_abs_diff(solved["survival"], exact["survival"]) < 1e-6

    def test_second_order(self):
        def error(step):
            grid = TimeGrid(10.0, step)
            return max_abs_diff(solve_s(make_spec(4, 1.0, 0.5), grid)["s"], closed_form_no_recovery(4, 1.0, 0.5, grid)["s"])

        coarse, fine = error(2e-3), error(1e-3)
        assert coarse / fine >= 3.5
        assert 1.7 < observed_order(coarse, fine) < 2.3

    def test_misaligned_recovery_time(self):
        spec = make_spec(2, 1.0, 0.5, RecoveryDistribution.deterministic(0.25))
        with pytest.raises(GridAlignmentError):
            solve_s(spec, TimeGrid(1.0, 0.1))

    def test_root_tail_relation(self):
        spec = make_spec(3, 1.0, 0.5, p=0.1)
        grid = TimeGrid(2.0, 0.05)
        root = root_tail_curve(spec, grid)
        full = survival_curve(spec, grid)
        assert np.allclose(root["root_tail"] * root["s"], full["survival"], atol=1e-14)

    def test_expected_susceptible_uses_the_scaled_rate(self):
        spec = make_spec(2, 3.0, 0.5)
        grid = TimeGrid(2.0, 0.05)
        assert np.allclose(expected_susceptible_curve(spec, grid)["survival"], survival_curve(make_spec(2, 1.0, 0.5), grid)["survival"])


class TestOracles:
    def test_bernoulli_ode(self):
        grid = TimeGrid(5.0, 1e-3)
        ode = bernoulli_ode_solve(4, 1.0, 0.5, grid)
        exact = closed_form_no_recovery(4, 1.0, 0.5, grid)
        assert max_abs_diff(ode["s"], exact["s"]) < 1e-8
        assert ode["s"][1000] == pytest.approx(n4_value(), abs=1e-8)

    def test_bernoulli_ode_without_infection(self):
        assert np.all(bernoulli_ode_solve(3, 0.0, 1.0, TimeGrid(1.0, 0.1))["s"] == 1.0)

    def test_dde_matches_the_volterra_solver(self):
        grid = TimeGrid(4.0, 1e-3)
        spec = make_spec(2, 1.0, 0.5, RecoveryDistribution.deterministic(1.0))
        dde = deterministic_recovery_dde_solve(2, 1.0, 0.5, 1.0, grid)
        assert max_abs_diff(solve_s(spec, grid)["s"], dde["s"]) < 1e-6

    def test_dde_before_recovery_is_the_bernoulli_ode(self):
        grid = TimeGrid(2.0, 0.01)
        dde = deterministic_recovery_dde_solve(2, 1.0, 0.5, 1.0, grid)
        ode = bernoulli_ode_solve(2, 1.0, 0.5, grid)
        assert max_abs_diff(dde["s"][:101], ode["s"][:101]) < 1e-12

    def test_dde_with_recovery_past_the_horizon(self):
        grid = TimeGrid(2.0, 0.1)
        dde = deterministic_recovery_dde_solve(2, 1.0, 0.5, 5.0, grid)
        assert np.allclose(dde["s"], bernoulli_ode_solve(2, 1.0, 0.5, grid)["s"])

    def test_exponential_recovery_ode_matches_the_volterra_solver(self):
        grid = TimeGrid(4.0, 1e-3)
        spec = make_spec(3, 1.0, 0.5, RecoveryDistribution.exponential(1.0))
        ode = exponential_recovery_ode_solve(3, 1.0, 0.5, 1.0, grid)
        assert max_abs_diff(solve_s(spec, grid)["s"], ode["s"]) < 1e-6

    def test_exponential_recovery_with_zero_mu(self):
        grid = TimeGrid(2.0, 0.01)
        assert np.allclose(
            exponential_recovery_ode_solve(2, 1.0, 0.5, 0.0, grid)["s"], bernoulli_ode_solve(2, 1.0, 0.5, grid)["s"]
        )


class TestEffectiveRate:
    def test_deterministic_recovery_is_a_truncated_rate(self):
        grid = TimeGrid(3.0, 0.01)
        spec = make_spec(2, 1.0, 0.5, RecoveryDistribution.deterministic(1.0))
        assert max_abs_diff(effective_two_state_solve(spec, grid)["s"], solve_s(spec, grid)["s"]) < 1e-12

    def test_exponential_recovery_through_the_tabulated_rate(self):
        grid = TimeGrid(3.0, 0.01)
        spec = make_spec(2, 1.0, 0.5, RecoveryDistribution.exponential(1.0))
        assert max_abs_diff(effective_two_state_solve(spec, grid)["s"], solve_s(spec, grid)["s"]) < 1e-4


class TestReferenceValues:
    def test_coarse_grid_values_come_from_a_fine_solve(self):
        spec = make_spec(2, 1.0, 0.5)
        grid = TimeGrid(2.0, 0.5)
        values = reference_values(survival_curve, spec, grid, "survival")
        assert values.shape == (5,)
        assert max_abs_diff(values, closed_form_no_recovery(2, 1.0, 0.5, grid)["survival"]) < 1e-6

    def test_observed_order(self):
        assert observed_order(4e-4, 1e-4) == pytest.approx(2.0)
        assert observed_order(1e-4, 0.0) == math.inf
