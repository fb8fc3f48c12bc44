import numpy as np
import pytest

from treesir.config import Settings
from treesir.discrete_solver import (
    DiscreteModelSpec,
    expected_susceptible_curve,
    reference_values,
    survival_curve,
)
from treesir.errors import DomainError, PreconditionError
from treesir.grid import TimeGrid
from treesir.ratekit import RateFunction, RecoveryDistribution
from treesir.tree_simulator import (
    TruncationConfig,
    compare_to_curve,
    estimate_expected_susceptible,
    exchangeability_pvalue,
    ks_distance,
    recursion_check,
    replica_rng,
    simulate_time_to_infection,
)

GRID = TimeGrid(2.0, 0.5)


def make_spec(n, eps, lam, recovery=None, p=0.0):
    return DiscreteModelSpec(
        n, p, RateFunction.constant(eps), RateFunction.constant(lam), recovery or RecoveryDistribution.never()
    )


class TestReplicaStreams:
    def test_same_key_same_draws(self):
        assert np.array_equal(replica_rng(7, 3).random(5), replica_rng(7, 3).random(5))

    def test_replicas_and_seeds_are_independent_streams(self):
        base = replica_rng(7, 3).random(5)
        assert not np.array_equal(base, replica_rng(7, 4).random(5))
        assert not np.array_equal(base, replica_rng(8, 3).random(5))


class TestTruncationConfig:
    def test_depth_must_be_positive(self):
        with pytest.raises(PreconditionError):
            TruncationConfig(0)

    def test_boundary_is_checked(self):
        with pytest.raises(DomainError):
            TruncationConfig(4, "sideways")


class TestSimulation:
    def test_seed_range_and_replicas(self, settings):
        spec = make_spec(2, 0.5, 0.5)
        with pytest.raises(PreconditionError):
            simulate_time_to_infection(spec, TruncationConfig(4), GRID, 10, -1, settings=settings)
        with pytest.raises(PreconditionError):
            simulate_time_to_infection(spec, TruncationConfig(4), GRID, 0, 1, settings=settings)

    def test_no_infection_source(self, settings):
        result = simulate_time_to_infection(make_spec(2, 1.0, 0.0), TruncationConfig(4), GRID, 200, 1, settings=settings)
        assert np.all(result.survival_hi == 1.0)
        assert np.all(result.survival_lo <= result.survival_hi)

    def test_bracket_is_ordered_and_starts_at_one(self, settings):
        result = simulate_time_to_infection(make_spec(2, 0.5, 0.5), TruncationConfig(6), GRID, 1000, 11, settings=settings)
        assert np.all(result.survival_lo <= result.survival_hi)
        assert result.survival_hi[0] == 1.0
        assert np.all(np.diff(result.survival_hi) <= 0)
        assert result.to_trajectory().names == ("survival_lo", "survival_hi", "stderr")

    def test_initially_infected_fraction(self, settings):
        result = simulate_time_to_infection(
            make_spec(2, 0.5, 0.5, p=0.3), TruncationConfig(6), GRID, 4000, 5, settings=settings
        )
        se = np.sqrt(0.3 * 0.7 / 4000)
        assert abs(result.survival_hi[0] - 0.7) < 4 * se

    def test_matches_the_analytic_law(self, settings):
        spec = make_spec(2, 0.5, 0.5)
        result = simulate_time_to_infection(spec, TruncationConfig(10), GRID, 4000, 2024, settings=settings)
        curve = reference_values(survival_curve, spec, GRID, "survival")
        comparison = compare_to_curve(result, curve)
        assert result.bracket_width < 0.01
        assert comparison.z_max <= 3.0
        assert ks_distance(result, curve) < 0.05

    def test_deterministic_recovery(self, settings):
        spec = make_spec(2, 1.0, 0.5, RecoveryDistribution.deterministic(0.5))
        result = simulate_time_to_infection(spec, TruncationConfig(8), GRID, 4000, 99, settings=settings)
        curve = reference_values(survival_curve, spec, GRID, "survival")
        assert compare_to_curve(result, curve).z_max <= 3.0

    def test_expected_susceptible(self, settings):
        spec = make_spec(2, 1.5, 0.5, p=0.1)
        result = estimate_expected_susceptible(spec, TruncationConfig(8), GRID, 4000, 3, settings=settings)
        curve = reference_values(expected_susceptible_curve, spec, GRID, "survival")
        assert result.target == "expected-susceptible"
        assert compare_to_curve(result, curve).z_max <= 3.0

    def test_deeper_truncation_narrows_the_bracket(self, settings):
        spec = make_spec(3, 1.0, 0.2)
        shallow = simulate_time_to_infection(spec, TruncationConfig(2), GRID, 1000, 8, settings=settings)
        deep = simulate_time_to_infection(spec, TruncationConfig(6), GRID, 1000, 8, settings=settings)
        assert deep.bracket_width <= shallow.bracket_width

    def test_exchangeable_branches(self, settings):
        result = simulate_time_to_infection(make_spec(3, 1.0, 0.5), TruncationConfig(6), GRID, 3000, 17, settings=settings)
        assert result.branch_counts.shape == (4,)
        assert result.branch_counts.sum() > 0
        assert exchangeability_pvalue(result) > 1e-3

    def test_identical_for_any_worker_count(self, tmp_path):
        spec = make_spec(2, 0.5, 0.5)
        serial = Settings(threads=1, out_dir=tmp_path, progress=False, block_size=100)
        parallel = Settings(threads=2, out_dir=tmp_path, progress=False, block_size=100)
        a = simulate_time_to_infection(spec, TruncationConfig(6), GRID, 400, 42, settings=serial)
        b = simulate_time_to_infection(spec, TruncationConfig(6), GRID, 400, 42, settings=parallel)
        assert np.array_equal(a.survival_lo, b.survival_lo)
        assert np.array_equal(a.survival_hi, b.survival_hi)
        assert np.array_equal(a.branch_counts, b.branch_counts)


class TestDiagnostics:
    def test_curve_shape_is_checked(self, settings):
        result = simulate_time_to_infection(make_spec(2, 0.5, 0.5), TruncationConfig(4), GRID, 50, 1, settings=settings)
        with pytest.raises(DomainError):
            compare_to_curve(result, np.ones(3))

    def test_curve_inside_the_bracket_scores_zero(self, settings):
        result = simulate_time_to_infection(make_spec(2, 0.5, 0.5), TruncationConfig(4), GRID, 50, 1, settings=settings)
        comparison = compare_to_curve(result, result.survival_mid)
        assert comparison.z_max == 0.0
        assert comparison.passed

    def test_recursion_check(self, settings):
        spec = make_spec(2, 1.0, 1.0)
        report = recursion_check(spec, TruncationConfig(8), GRID, 4000, 123, settings=settings)
        assert report.result.target == "root"
        assert report.result.branch_counts.shape == (2,)
        assert report.curve[0] == pytest.approx(1.0)
        assert report.comparison.z_max <= 3.0
