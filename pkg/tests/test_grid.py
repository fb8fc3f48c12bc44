import numpy as np
import pytest

from treesir.errors import DomainError, GridAlignmentError
from treesir.grid import TimeGrid, Trajectory, max_abs_diff, stieltjes_lag_sum, trapezoid_lag_sum


class TestTimeGrid:
    def test_nodes_and_count(self):
        grid = TimeGrid(1.0, 0.1)
        assert grid.m == 11
        assert grid.nodes[-1] == pytest.approx(1.0)
        assert grid.nodes[3] == pytest.approx(0.3)

    def test_horizon_must_be_a_multiple_of_the_step(self):
        with pytest.raises(GridAlignmentError):
            TimeGrid(1.0, 0.3)

    def test_step_must_be_positive(self):
        with pytest.raises(DomainError):
            TimeGrid(1.0, 0.0)

    @pytest.mark.parametrize("step, decimals", [(0.001, 3), (0.5, 1), (1.0, 0), (0.25, 2)])
    def test_decimals_follow_the_step(self, step, decimals):
        assert TimeGrid(2.0, step).decimals == decimals

    def test_index_of_and_alignment(self):
        grid = TimeGrid(2.0, 0.1)
        assert grid.index_of(0.5) == 5
        assert grid.is_aligned(1.2)
        assert not grid.is_aligned(0.25)
        with pytest.raises(GridAlignmentError, match="not a multiple of the grid step"):
            grid.index_of(0.25, what="H")

    def test_require_aligned_ignores_times_past_the_horizon(self):
        grid = TimeGrid(1.0, 0.1)
        grid.require_aligned([0.5, 3.33], what="kink")
        with pytest.raises(GridAlignmentError):
            grid.require_aligned([0.55], what="kink")

    def test_refined_and_coarsened(self):
        grid = TimeGrid(1.0, 0.1)
        assert grid.refined().m == 21
        assert grid.coarsened().m == 6


class TestTrajectory:
    def test_shape_is_checked(self):
        grid = TimeGrid(1.0, 0.5)
        with pytest.raises(DomainError):
            Trajectory(grid, {"s": np.ones(4)})

    def test_with_series_and_frame(self):
        grid = TimeGrid(1.0, 0.5)
        traj = Trajectory(grid, {"s": np.ones(3)}, {"clamped": 0})
        extended = traj.with_series(survival=np.zeros(3))
        assert extended.names == ("s", "survival")
        assert "survival" in extended and "survival" not in traj
        assert extended.meta["clamped"] == 0
        frame = extended.to_frame()
        assert list(frame.columns) == ["t", "s", "survival"]
        assert frame["t"].tolist() == pytest.approx([0.0, 0.5, 1.0])


class TestLagSums:
    def test_trapezoid_with_constant_kernel(self):
        k = 6
        g = np.ones(k + 1)
        kernel = np.full(k + 1, 2.0)
        assert trapezoid_lag_sum(g, kernel, kernel, k) == pytest.approx(0.5 * 2.0 + (k - 1) * 2.0)
        assert trapezoid_lag_sum(g, kernel, kernel, 0) == 0.0

    def test_stieltjes_with_constant_kernel_telescopes(self):
        values = np.array([1.0, 0.9, 0.7, 0.6, 0.55])
        increments = np.concatenate(([0.0], np.diff(values)))
        kernel = np.full(5, 3.0)
        assert stieltjes_lag_sum(increments, kernel, kernel, 4) == pytest.approx(3.0 * (values[4] - values[0]))

    def test_max_abs_diff(self):
        assert max_abs_diff(np.array([0.0, 1.0]), np.array([0.5, 0.75])) == pytest.approx(0.5)
        assert max_abs_diff(np.array([]), np.array([])) == 0.0
