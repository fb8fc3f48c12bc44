import math

import numpy as np
import pytest

from treesir.continuum import (
    ContinuousModelSpec,
    check_conservation,
    classic_master_form,
    classic_sir_oracle,
    compartments,
    deterministic_recovery_continuum_solve,
    finite_n_convergence,
    infected_trajectory,
    latent_model_solve,
    master_derivative,
    master_differential_residual,
    recovered_trajectory,
    solve_master,
    stationary_state,
)
from treesir.errors import ConsistencyError, DomainError, PreconditionError, SolverError
from treesir.grid import TimeGrid, Trajectory, max_abs_diff
from treesir.ratekit import RateFunction, RecoveryDistribution

NO_SEED = RateFunction.constant(0.0)


def classic(eps=2.0, mu=1.0, S0=0.99):
    return ContinuousModelSpec(RateFunction.constant(eps), RecoveryDistribution.exponential(mu), NO_SEED, S0)


class TestModelSpec:
    @pytest.mark.parametrize("S0", [0.0, -0.1, 1.5])
    def test_S0_range(self, S0):
        with pytest.raises(PreconditionError):
            classic(S0=S0)

    def test_initially_infected(self):
        assert classic(S0=0.9).I0 == pytest.approx(0.1)


class TestClassicCase:
    def test_master_matches_the_classic_sir_system(self):
        grid = TimeGrid(10.0, 1e-3)
        solved = compartments(classic(), grid)
        oracle = classic_sir_oracle(2.0, 1.0, 0.99, 0.01, grid)
        for name in ("S", "I", "R"):
            assert max_abs_diff(solved[name], oracle[name]) < 1e-6

    def test_master_form_matches_the_classic_sir_system(self):
        grid = TimeGrid(10.0, 0.01)
        assert max_abs_diff(classic_master_form(0.99, 2.0, 1.0, grid)["S"], classic_sir_oracle(2.0, 1.0, 0.99, 0.01, grid)["S"]) < 1e-8

    def test_conservation_holds_to_rounding(self):
        solved = compartments(classic(), TimeGrid(5.0, 0.01))
        assert check_conservation(solved) <= 1e-12
        assert np.all(np.diff(solved["S"]) <= 0)

    def test_no_infected_no_epidemic(self):
        solved = solve_master(classic(S0=1.0), TimeGrid(5.0, 0.1))
        assert np.all(solved["S"] == 1.0)

    def test_classic_oracle_rejects_bad_input(self):
        grid = TimeGrid(1.0, 0.1)
        with pytest.raises(DomainError):
            classic_sir_oracle(-1.0, 1.0, 0.99, 0.01, grid)
        with pytest.raises(DomainError):
            classic_sir_oracle(1.0, 1.0, 0.99, 0.5, grid)
        with pytest.raises(DomainError):
            classic_master_form(0.99, 0.0, 1.0, grid)


class TestDifferentialForm:
    def test_residual_is_small(self):
        spec = classic()
        grid = TimeGrid(5.0, 1e-3)
        residual = master_differential_residual(solve_master(spec, grid), spec)
        assert residual.meta["max_abs_residual"] < 1e-3

    def test_the_two_forms_agree(self):
        spec = classic()
        S = solve_master(spec, TimeGrid(5.0, 0.01))
        by_parts = master_differential_residual(S, spec, form="by-parts")["residual"]
        direct = master_differential_residual(S, spec, form="direct")["residual"]
        assert max_abs_diff(by_parts, direct) < 1e-10

    def test_derivative_matches_finite_differences(self):
        spec = classic()
        S = solve_master(spec, TimeGrid(5.0, 1e-3))
        slope = np.gradient(S["S"], 1e-3, edge_order=2)
        assert max_abs_diff(master_derivative(S, spec), slope) < 1e-3

    def test_unknown_form(self):
        spec = classic()
        S = solve_master(spec, TimeGrid(1.0, 0.1))
        with pytest.raises(DomainError):
            master_differential_residual(S, spec, form="sideways")


class TestCompartments:
    def test_increasing_S_is_inconsistent(self):
        grid = TimeGrid(1.0, 0.1)
        S = Trajectory(grid, {"S": np.linspace(0.5, 1.0, grid.m)})
        with pytest.raises(ConsistencyError):
            infected_trajectory(S, RecoveryDistribution.exponential(1.0), 0.0)

    def test_nobody_recovers_without_recovery(self):
        spec = ContinuousModelSpec(RateFunction.constant(1.0), RecoveryDistribution.never(), NO_SEED, 0.9)
        S = solve_master(spec, TimeGrid(2.0, 0.1))
        assert np.all(recovered_trajectory(S, spec.recovery, spec.I0)["R"] == 0.0)

    def test_conservation_gap_is_reported(self):
        grid = TimeGrid(1.0, 0.5)
        ones = np.ones(grid.m)
        broken = Trajectory(grid, {"S": 0.5 * ones, "I": 0.2 * ones, "R": 0.2 * ones})
        with pytest.raises(ConsistencyError):
            check_conservation(broken)


class TestStationaryState:
    def test_classic_final_size(self):
        report = stationary_state(classic())
        assert report.interior
        assert report.residual <= 1e-10
        assert report.S_inf == pytest.approx(0.1998, abs=1e-3)
        assert math.log(report.S_inf / 0.99) + 2.0 * (1.0 - report.S_inf) == pytest.approx(0.0, abs=1e-10)
        lo, hi = report.bracket
        assert lo < report.S_inf < hi

    def test_deep_epidemic_root_near_zero(self):
        report = stationary_state(classic(eps=60.0))
        assert report.interior
        assert report.iterations > 0
        assert report.residual <= 1e-10
        assert report.S_inf == pytest.approx(0.99 * math.exp(-60.0), rel=1e-9)
        lo, hi = report.bracket
        assert 0.0 < lo < report.S_inf < hi < 0.99

    def test_root_below_the_float_range(self):
        with pytest.raises(SolverError):
            stationary_state(classic(eps=800.0))

    def test_trajectory_settles_on_the_stationary_state(self):
        report = stationary_state(classic())
        settled = classic_master_form(0.99, 2.0, 1.0, TimeGrid(40.0, 0.01))["S"][-1]
        assert settled == pytest.approx(report.S_inf, abs=1e-6)
        assert solve_master(classic(), TimeGrid(40.0, 0.02))["S"][-1] == pytest.approx(report.S_inf, abs=1e-3)

    def test_fully_susceptible_start(self):
        report = stationary_state(classic(S0=1.0))
        assert report.S_inf == pytest.approx(0.2032, abs=1e-4)

    def test_no_interior_root_below_threshold(self):
        report = stationary_state(classic(eps=0.5, S0=1.0))
        assert not report.interior
        assert report.S_inf == 1.0

    def test_needs_finite_totals(self):
        never = ContinuousModelSpec(RateFunction.constant(1.0), RecoveryDistribution.never(), NO_SEED, 0.99)
        with pytest.raises(PreconditionError):
            stationary_state(never)
        seeded = ContinuousModelSpec(RateFunction.constant(1.0), RecoveryDistribution.exponential(1.0), RateFunction.constant(0.1), 0.99)
        with pytest.raises(PreconditionError):
            stationary_state(seeded)


class TestLatentModel:
    def test_matches_the_master_equation(self):
        grid = TimeGrid(6.0, 1e-3)
        spec = ContinuousModelSpec(RateFunction.latent_window(2.0, 0.5), RecoveryDistribution.never(), NO_SEED, 0.99)
        master = solve_master(spec, grid)["S"]
        delayed = latent_model_solve(2.0, 0.5, 0.99, grid)["S"]
        assert max_abs_diff(master, delayed) < 1e-4

    def test_latent_history_holds_S_until_the_latency(self):
        grid = TimeGrid(2.0, 0.01)
        values = latent_model_solve(2.0, 0.5, 0.99, grid)["S"]
        assert np.allclose(values[:51], 0.99)

    def test_exposed_history_first_segment(self):
        grid = TimeGrid(2.0, 0.01)
        traj = latent_model_solve(2.0, 0.5, 0.99, grid, history="exposed")
        t = grid.nodes[:51]
        assert max_abs_diff(traj["S"][:51], 0.99 * np.exp(-2.0 * 0.01 * t)) < 1e-10
        assert traj.meta["history"] == "exposed"

    def test_zero_latency_is_logistic(self):
        grid = TimeGrid(3.0, 0.01)
        values = latent_model_solve(1.0, 0.0, 0.5, grid)["S"]
        exact = 0.5 / (0.5 + 0.5 * np.exp(grid.nodes))
        assert max_abs_diff(values, exact) < 1e-8

    def test_bad_arguments(self):
        grid = TimeGrid(1.0, 0.1)
        with pytest.raises(DomainError):
            latent_model_solve(1.0, -0.5, 0.9, grid)
        with pytest.raises(DomainError):
            latent_model_solve(1.0, 0.5, 0.9, grid, history="forgotten")


class TestDeterministicRecovery:
    def test_matches_the_compartment_solution(self):
        grid = TimeGrid(6.0, 1e-3)
        spec = ContinuousModelSpec(RateFunction.constant(2.0), RecoveryDistribution.deterministic(1.0), NO_SEED, 0.99)
        expected = compartments(spec, grid)
        delayed = deterministic_recovery_continuum_solve(2.0, 1.0, 0.99, grid)
        for name in ("S", "I", "R"):
            assert max_abs_diff(expected[name], delayed[name]) < 1e-4

    def test_resident_cohort_variant_conserves(self):
        traj = deterministic_recovery_continuum_solve(2.0, 1.0, 0.99, TimeGrid(4.0, 0.01), initial_cohort_recovers=False)
        assert check_conservation(traj) <= 1e-12
        assert traj["I"][-1] >= 0.01 - 1e-12

    def test_recovery_time_must_be_positive(self):
        with pytest.raises(DomainError):
            deterministic_recovery_continuum_solve(2.0, 0.0, 0.99, TimeGrid(1.0, 0.1))


class TestFiniteN:
    def test_master_limit(self):
        report = finite_n_convergence(
            RateFunction.constant(1.0),
            NO_SEED,
            RecoveryDistribution.exponential(1.0),
            0.1,
            TimeGrid(5.0, 0.01),
            [2, 4, 8, 16],
        )
        assert report.target == "master"
        assert report.decreasing

    def test_logistic_limit(self):
        report = finite_n_convergence(
            RateFunction.constant(1.0),
            RateFunction.constant(1.0),
            RecoveryDistribution.never(),
            0.0,
            TimeGrid(3.0, 0.01),
            [1, 4, 16],
            target="logistic",
        )
        assert report.distances[-1] < report.distances[0]

    def test_n_list_must_increase(self):
        with pytest.raises(PreconditionError):
            finite_n_convergence(
                RateFunction.constant(1.0), NO_SEED, RecoveryDistribution.never(), 0.1, TimeGrid(1.0, 0.1), [4, 2]
            )
