"""Continuous limit: the master equation for S_t and the SIR family it implies.

    log(S_t / S_0) = -int_0^t lambda_u du - int_0^t (1 - S_u) gamma_{t-u} du,   gamma = eps * beta

    I_t = I_0 beta_t       - int_0^t S'_u beta_{t-u} du
    R_t = I_0 (1 - beta_t) - int_0^t S'_u (1 - beta_{t-u}) du

The two convolutions are evaluated as Stieltjes sums over the increments of
S, which makes S + I + R = 1 hold to rounding.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy import optimize

from .discrete_solver import (
    DiscreteModelSpec,
    expected_susceptible_curve,
    logistic_limit_curve,
    survival_curve,
)
from .errors import ConsistencyError, DomainError, PreconditionError, SolverError
from .grid import TimeGrid, Trajectory, max_abs_diff, stieltjes_lag_sum, trapezoid_lag_sum
from .ratekit import (
    RateFunction,
    RecoveryDistribution,
    derivative_kinks,
    gamma_on_grid,
    gamma_total,
)
from .stepping import integrate_delay_rk4, integrate_rk4

logger = logging.getLogger(__name__)

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 50
CONSERVATION_TOL = 1e-12
STATIONARY_EDGE = 1e-12
STATIONARY_SCAN = 4000
STATIONARY_LOG_FLOOR = math.log(np.finfo(float).tiny)

History = Literal["latent", "exposed"]
ResidualForm = Literal["by-parts", "direct"]


@dataclass(frozen=True, slots=True)
class ContinuousModelSpec:
    """gamma_t = w_t beta_t with ``eps`` as w and ``recovery`` as beta."""

    eps: RateFunction
    recovery: RecoveryDistribution
    lam: RateFunction
    S0: float

    def __post_init__(self) -> None:
        if not 0.0 < self.S0 <= 1.0:
            raise PreconditionError(f"S0 must lie in (0, 1], got {self.S0!r}")

    @property
    def I0(self) -> float:
        return 1.0 - self.S0

    def gamma_on(self, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
        grid.require_aligned(derivative_kinks(self.eps, self.recovery), what="kink of gamma")
        return gamma_on_grid(self.eps, self.recovery, grid)


@dataclass(frozen=True, slots=True)
class StationaryReport:
    S_inf: float
    residual: float
    iterations: int
    bracket: tuple[float, float]
    interior: bool = True


@dataclass(frozen=True, slots=True)
class ConvergenceReport:
    target: str
    n_list: tuple[int, ...]
    distances: tuple[float, ...]

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.distances, self.distances[1:]))


# --- master equation -----------------------------------------------------------------


def solve_master(
    spec: ContinuousModelSpec,
    grid: TimeGrid,
    *,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = FIXED_POINT_MAX_ITER,
) -> Trajectory:
    """Trapezoid stepping on the log form, fixed point on y_k = log S_k."""
    gamma_left, gamma_right = spec.gamma_on(grid)
    gamma_mid = 0.5 * (gamma_left + gamma_right)
    m, h = grid.m, grid.step
    log_s0 = math.log(spec.S0)
    forcing = np.asarray(spec.lam.cumulative(grid.nodes))
    implicit = 0.5 * h * gamma_right[0]

    s = np.empty(m)
    depleted = np.empty(m)
    s[0] = spec.S0
    depleted[0] = spec.I0
    y_prev = log_s0
    worst = 0
    for k in range(1, m):
        base = log_s0 - forcing[k] - h * trapezoid_lag_sum(depleted, gamma_left, gamma_mid, k)
        y = y_prev
        for iteration in range(1, max_iter + 1):
            y_next = base - implicit * (1.0 - math.exp(y))
            if abs(y_next - y) <= tol:
                y = y_next
                break
            y = y_next
        else:
            raise SolverError(f"fixed point for log S did not converge within {max_iter} iterations", node=k)
        worst = max(worst, iteration)
        s[k] = math.exp(y)
        depleted[k] = 1.0 - s[k]
        y_prev = y

    logger.debug("Master equation solved | nodes=%s S_T=%.6g max_iterations=%s", m, s[-1], worst)
    return Trajectory(grid, {"S": s}, {"max_iterations": worst})


def _increments(values: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], np.diff(values)))


def _gamma_segment_averages(gamma_left: np.ndarray, gamma_right: np.ndarray, k: int) -> np.ndarray:
    """gbar[j], j = 0..k: gamma at lag t_k for j = 0, segment averages over [u_{j-1}, u_j] after."""
    averaged = 0.5 * (gamma_right[k - 1::-1][:k] + gamma_left[k:0:-1])
    return np.concatenate(([gamma_right[k]], averaged))


def _memory_terms(S: Trajectory, spec: ContinuousModelSpec, form: ResidualForm) -> np.ndarray:
    """Discrete -(1 - S_0) gamma_t + int S'_u gamma_{t-u} du, in either of its two forms.

    The ``direct`` form is the Abel-summed rewrite of the ``by-parts`` sum,
    so the two agree to rounding.
    """
    if form not in ("by-parts", "direct"):
        raise DomainError(f"residual form must be 'by-parts' or 'direct', got {form!r}")
    grid = S.grid
    values = np.asarray(S["S"])
    gamma_left, gamma_right = spec.gamma_on(grid)
    out = np.empty(grid.m)
    out[0] = -(1.0 - values[0]) * gamma_right[0]
    if form == "by-parts":
        steps = _increments(values)
        for k in range(1, grid.m):
            out[k] = -(1.0 - spec.S0) * gamma_right[k] + stieltjes_lag_sum(steps, gamma_left, gamma_right, k)
    else:
        remaining = 1.0 - values
        for k in range(1, grid.m):
            gbar = _gamma_segment_averages(gamma_left, gamma_right, k)
            out[k] = -remaining[k] * gbar[k] + float(np.dot(remaining[:k], np.diff(gbar)))
    return out


def master_derivative(S: Trajectory, spec: ContinuousModelSpec) -> np.ndarray:
    """S'_t from the right-hand side of the differential form, given the solved S."""
    values = np.asarray(S["S"])
    lam = np.asarray(spec.lam.value(S.grid.nodes))
    return values * (-lam + _memory_terms(S, spec, "by-parts"))


def master_differential_residual(S: Trajectory, spec: ContinuousModelSpec, *, form: ResidualForm = "by-parts") -> Trajectory:
    """S'/S minus the right-hand side of the differential form, S' by finite differences."""
    values = np.asarray(S["S"])
    if S.grid.m < 3:
        raise DomainError("the differential residual needs at least three grid nodes")
    slope = np.gradient(values, S.grid.step, edge_order=2)
    lam = np.asarray(spec.lam.value(S.grid.nodes))
    residual = slope / values + lam - _memory_terms(S, spec, form)
    result = Trajectory(S.grid, {"residual": residual}, {"max_abs_residual": float(np.max(np.abs(residual)))})
    logger.debug("Differential residual | form=%s max=%.3g", form, result.meta["max_abs_residual"])
    return result


# --- compartments ------------------------------------------------------------------


def _tail_limits(beta: RecoveryDistribution, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    nodes = grid.nodes
    return np.asarray(beta.tail(nodes, "left"), dtype=float), np.asarray(beta.tail(nodes, "right"), dtype=float)


def _lagged_convolution(steps: np.ndarray, kernel_left: np.ndarray, kernel_right: np.ndarray) -> np.ndarray:
    out = np.zeros(len(steps))
    for k in range(1, len(steps)):
        out[k] = stieltjes_lag_sum(steps, kernel_left, kernel_right, k)
    return out


def infected_trajectory(S: Trajectory, beta: RecoveryDistribution, I0: float) -> Trajectory:
    """I_t from the increments of S and the recovery tail."""
    values = np.asarray(S["S"])
    tail_left, tail_right = _tail_limits(beta, S.grid)
    infected = I0 * tail_right - _lagged_convolution(_increments(values), tail_left, tail_right)
    if np.min(infected) < -CONSERVATION_TOL:
        raise ConsistencyError(
            f"I_t went negative (min {float(np.min(infected)):.3g}); S must be non-increasing and beta a valid tail"
        )
    return Trajectory(S.grid, {"I": infected})


def recovered_trajectory(S: Trajectory, beta: RecoveryDistribution, I0: float) -> Trajectory:
    values = np.asarray(S["S"])
    tail_left, tail_right = _tail_limits(beta, S.grid)
    recovered = I0 * (1.0 - tail_right) - _lagged_convolution(_increments(values), 1.0 - tail_left, 1.0 - tail_right)
    if np.min(recovered) < -CONSERVATION_TOL:
        raise ConsistencyError(f"R_t went negative (min {float(np.min(recovered)):.3g})")
    return Trajectory(S.grid, {"R": recovered})


def check_conservation(trajectory: Trajectory, *, tol: float = CONSERVATION_TOL) -> float:
    """Max |S + I + R - 1|; raises ConsistencyError above ``tol``."""
    gap = float(np.max(np.abs(trajectory["S"] + trajectory["I"] + trajectory["R"] - 1.0)))
    if gap > tol:
        raise ConsistencyError(f"S + I + R deviates from 1 by {gap:.3g} (tolerance {tol:.1g})")
    for name in ("I", "R"):
        low = float(np.min(trajectory[name]))
        if low < -tol:
            raise ConsistencyError(f"{name} went negative (min {low:.3g})")
    return gap


def compartments(spec: ContinuousModelSpec, grid: TimeGrid) -> Trajectory:
    S = solve_master(spec, grid)
    I = infected_trajectory(S, spec.recovery, spec.I0)["I"]
    R = recovered_trajectory(S, spec.recovery, spec.I0)["R"]
    full = S.with_series(I=I, R=R)
    check_conservation(full)
    return full


# --- classic case ------------------------------------------------------------------


def classic_sir_oracle(eps: float, mu: float, S0: float, I0: float, grid: TimeGrid) -> Trajectory:
    """RK4 on S' = -eps S I, I' = eps S I - mu I, R' = mu I."""
    if eps < 0 or mu < 0:
        raise DomainError(f"eps and mu must be nonnegative, got eps={eps!r} mu={mu!r}")
    if S0 < 0 or I0 < 0 or S0 + I0 > 1.0 + CONSERVATION_TOL:
        raise DomainError(f"need S0, I0 >= 0 and S0 + I0 <= 1, got S0={S0!r} I0={I0!r}")

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        force = eps * y[0] * y[1]
        return np.array([-force, force - mu * y[1], mu * y[1]])

    values = integrate_rk4(rhs, [S0, I0, 1.0 - S0 - I0], grid)
    return Trajectory(grid, {"S": values[:, 0], "I": values[:, 1], "R": values[:, 2]})


def classic_master_form(S0: float, eps: float, mu: float, grid: TimeGrid) -> Trajectory:
    """RK4 on S' = -eps S (1 - S + (mu / eps) log(S / S0))."""
    if not eps > 0:
        raise DomainError(f"classic master form needs eps > 0, got {eps!r}")
    if not 0.0 < S0 <= 1.0:
        raise PreconditionError(f"S0 must lie in (0, 1], got {S0!r}")
    ratio = mu / eps

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        if y[0] <= 0:
            raise SolverError("S reached 0 in the classic master form")
        return -eps * y * (1.0 - y + ratio * np.log(y / S0))

    def guard(k: int, y: np.ndarray) -> None:
        if not y[0] > 0:
            raise SolverError("S underflowed to 0 in the classic master form", node=k)

    return Trajectory(grid, {"S": integrate_rk4(rhs, [S0], grid, guard=guard)[:, 0]})


# --- stationary state ---------------------------------------------------------------


def stationary_state(spec: ContinuousModelSpec) -> StationaryReport:
    """Smallest root of log(S/S0) + int lambda + (1 - S) int gamma = 0 in (0, S0).

    Solved in y = log S; the balance is concave in y, so the scan from a floor
    where it is negative meets at most one sign change.
    """
    total_gamma = gamma_total(spec.eps, spec.recovery)
    total_lambda = spec.lam.total()
    if not math.isfinite(total_gamma):
        raise PreconditionError("stationary state needs a finite integral of gamma (recovery or a vanishing rate)")
    if not math.isfinite(total_lambda):
        raise PreconditionError("stationary state needs a finite integral of lambda")
    S0 = spec.S0
    log_S0 = math.log(S0)

    def balance(y: float) -> float:
        return y - log_S0 + total_lambda + (1.0 - math.exp(y)) * total_gamma

    upper = S0 - STATIONARY_EDGE
    if upper <= STATIONARY_EDGE:
        return StationaryReport(S0, 0.0, 0, (S0, S0), interior=False)
    # balance(y) <= y - log S0 + int lambda + int gamma, so balance(floor) <= -1
    floor = min(math.log(STATIONARY_EDGE), log_S0 - total_lambda - total_gamma - 1.0)
    if floor < STATIONARY_LOG_FLOOR:
        raise SolverError(f"stationary root lies below the smallest positive float (log S < {floor:.4g})")
    scan = np.linspace(floor, math.log(upper), STATIONARY_SCAN)
    values = np.array([balance(y) for y in scan])
    if values[0] >= 0:
        raise SolverError(f"stationary balance is nonnegative at the scan floor log S = {floor:.4g}")
    crossings = np.flatnonzero((values[:-1] < 0) & (values[1:] >= 0))
    if crossings.size == 0:
        logger.info("Stationary state | no interior root, S_inf=S0=%s", S0)
        return StationaryReport(S0, abs(balance(log_S0)), 0, (math.exp(scan[-1]), S0), interior=False)
    lo, hi = float(scan[crossings[0]]), float(scan[crossings[0] + 1])
    root, info = optimize.bisect(balance, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200, full_output=True)
    report = StationaryReport(math.exp(root), abs(balance(root)), int(info.iterations), (math.exp(lo), math.exp(hi)))
    logger.debug("Stationary state | S_inf=%.12g residual=%.3g iterations=%s", report.S_inf, report.residual, report.iterations)
    return report


# --- special models -----------------------------------------------------------------


def latent_model_solve(eps: float, latency: float, S0: float, grid: TimeGrid, *, history: History = "latent") -> Trajectory:
    """S' = -eps S_t I_{t-L} with I = 1 - S.

    ``history="latent"`` sets I_u = 0 for u < 0 (the initially infected turn
    infectious at L, as in the master equation with gamma = eps 1{t >= L});
    ``history="exposed"`` sets I_u = I_0 for u < 0.
    """
    if eps < 0:
        raise DomainError(f"eps must be nonnegative, got {eps!r}")
    if latency < 0:
        raise DomainError(f"latency must be nonnegative, got {latency!r}")
    if history not in ("latent", "exposed"):
        raise DomainError(f"history must be 'latent' or 'exposed', got {history!r}")
    if not 0.0 < S0 <= 1.0:
        raise PreconditionError(f"S0 must lie in (0, 1], got {S0!r}")

    if latency == 0 or latency > grid.horizon:
        if latency == 0:
            rhs_plain = lambda t, y: -eps * y * (1.0 - y)
        else:
            exposure = 0.0 if history == "latent" else 1.0 - S0
            rhs_plain = lambda t, y: -eps * exposure * y
        values = integrate_rk4(rhs_plain, [S0], grid)[:, 0]
    else:
        before = 1.0 if history == "latent" else S0

        def rhs(t: float, y: np.ndarray, lagged: np.ndarray) -> np.ndarray:
            return -eps * y * (1.0 - lagged)

        values = integrate_delay_rk4(rhs, [S0], grid, latency, lambda u: np.array([before]))[:, 0]
    return Trajectory(grid, {"S": values, "I": 1.0 - values}, {"history": history})


def deterministic_recovery_continuum_solve(
    eps: float,
    duration: float,
    S0: float,
    grid: TimeGrid,
    *,
    initial_cohort_recovers: bool = True,
) -> Trajectory:
    """Constant infection rate with every infective recovering exactly H after infection.

    With the initially infected cohort recovering at H, S' = -eps S (S_{t-H} - S_t),
    I = S_{t-H} - S_t and R = 1 - S_{t-H} with S = 1 before 0. Otherwise the
    cohort stays infected: S' = -eps S (I_0 + S_{t-H} - S_t) with S = S_0 before 0.
    """
    if eps < 0:
        raise DomainError(f"eps must be nonnegative, got {eps!r}")
    if not duration > 0:
        raise DomainError(f"recovery time H must be positive, got {duration!r}")
    if not 0.0 < S0 <= 1.0:
        raise PreconditionError(f"S0 must lie in (0, 1], got {S0!r}")
    before = 1.0 if initial_cohort_recovers else S0
    resident = 0.0 if initial_cohort_recovers else 1.0 - S0

    if duration > grid.horizon:
        values = integrate_rk4(lambda t, y: -eps * y * (1.0 - y), [S0], grid)[:, 0]
        lagged = np.full(grid.m, before)
    else:
        lag_steps = grid.index_of(duration, what="H")

        def rhs(t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray:
            return -eps * y * (resident + z - y)

        values = integrate_delay_rk4(rhs, [S0], grid, duration, lambda u: np.array([before]))[:, 0]
        lagged = np.concatenate((np.full(lag_steps, before), values[: grid.m - lag_steps]))
    infected = resident + lagged - values
    recovered = before - lagged
    trajectory = Trajectory(
        grid,
        {"S": values, "I": infected, "R": recovered},
        {"initial_cohort_recovers": initial_cohort_recovers},
    )
    check_conservation(trajectory)
    return trajectory


# --- finite n -------------------------------------------------------------------------


def finite_n_convergence(
    eps: RateFunction,
    lam: RateFunction,
    recovery: RecoveryDistribution,
    p: float,
    grid: TimeGrid,
    n_list: Sequence[int],
    *,
    target: Literal["master", "logistic"] = "master",
) -> ConvergenceReport:
    """Max-norm distances of the finite-n curves to their limit, one per n.

    ``master``: S_{t,n} (per-edge rate eps / (n + 1)) against solve_master with
    S_0 = 1 - p. ``logistic``: P(tau <= t) with per-edge rate c / n, c the
    constant value of ``eps``, against the logistic curve.
    """
    ns = tuple(int(n) for n in n_list)
    if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
        raise PreconditionError(f"n_list must be strictly increasing and non-empty, got {list(n_list)!r}")

    distances = []
    if target == "master":
        limit = solve_master(ContinuousModelSpec(eps, recovery, lam, 1.0 - p), grid)["S"]
        for n in ns:
            curve = expected_susceptible_curve(DiscreteModelSpec(n, p, eps, lam, recovery), grid)["survival"]
            distances.append(max_abs_diff(curve, limit))
    elif target == "logistic":
        c, lam_value = eps.constant_value, lam.constant_value
        if c is None or lam_value is None:
            raise PreconditionError("the logistic limit needs constant eps (as c) and constant lambda")
        limit = logistic_limit_curve(c, lam_value, grid)["infected"]
        for n in ns:
            spec = DiscreteModelSpec(n, p, RateFunction.constant(c / n), lam, recovery)
            distances.append(max_abs_diff(1.0 - survival_curve(spec, grid)["survival"], limit))
    else:
        raise DomainError(f"convergence target must be 'master' or 'logistic', got {target!r}")

    for n, d in zip(ns, distances):
        logger.debug("Finite-n distance | target=%s n=%s distance=%.3g", target, n, d)
    return ConvergenceReport(target, ns, tuple(distances))
