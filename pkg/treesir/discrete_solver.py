"""Time-to-infection law on the homogeneous tree and its closed-form / ODE / DDE oracles.

For a susceptible vertex of degree n + 1,

    P(tau > t) = (1 - p) f_t s_t^(n+1),
    s_t        = phi_t - (1 - p) int_0^t f_u s_u^n phi'_{t-u} du,

where s_t is the probability that one fixed neighbour direction has not
delivered the infection by t.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import DomainError, PreconditionError, SolverError
from .grid import TimeGrid, Trajectory, trapezoid_lag_sum
from .ratekit import (
    RateFunction,
    RecoveryDistribution,
    derivative_kinks,
    derivative_on_grid,
    effective_rate,
    neighbor_survival_on_grid,
    self_survival_on_grid,
)
from .stepping import integrate_delay_rk4, integrate_rk4

logger = logging.getLogger(__name__)

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 50
REFERENCE_STEP = 1e-3


@dataclass(frozen=True, slots=True)
class DiscreteModelSpec:
    n: int
    p: float
    eps: RateFunction
    lam: RateFunction
    recovery: RecoveryDistribution

    def __post_init__(self) -> None:
        if isinstance(self.n, bool) or not isinstance(self.n, int) or self.n < 1:
            raise PreconditionError(f"n must be an integer >= 1 (vertex degree n + 1), got {self.n!r}")
        if not 0.0 <= self.p < 1.0:
            raise PreconditionError(
                f"p must satisfy 0 <= p < 1 because the time-to-infection law conditions "
                f"on the vertex starting susceptible, got p={self.p!r}"
            )

    @property
    def degree(self) -> int:
        return self.n + 1

    def scaled(self) -> "DiscreteModelSpec":
        """Same model with the per-edge rate eps / (n + 1)."""
        return replace(self, eps=self.eps.scaled(1.0 / (self.n + 1)))


def scaled_spec(spec: DiscreteModelSpec) -> DiscreteModelSpec:
    return spec.scaled()


def solve_s(
    spec: DiscreteModelSpec,
    grid: TimeGrid,
    *,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = FIXED_POINT_MAX_ITER,
) -> Trajectory:
    """Trapezoidal product integration of the Volterra equation for s_t.

    The u = t endpoint of the quadrature carries s_t^n, so each node is closed
    by a scalar fixed-point iteration seeded with the previous value.
    """
    grid.require_aligned(derivative_kinks(spec.eps, spec.recovery), what="kink of phi'")
    m, h, n = grid.m, grid.step, spec.n
    survivor = 1.0 - spec.p

    phi = neighbor_survival_on_grid(spec.eps, spec.recovery, grid)
    d_left, d_right = derivative_on_grid(spec.eps, spec.recovery, grid)
    d_mid = 0.5 * (d_left + d_right)
    f = self_survival_on_grid(spec.lam, grid)

    s = np.empty(m)
    g = np.empty(m)
    s[0] = 1.0
    g[0] = f[0]
    implicit = -0.5 * survivor * h * d_right[0]
    clamped = 0
    worst = 0

    for k in range(1, m):
        base = phi[k] - survivor * h * trapezoid_lag_sum(g, d_left, d_mid, k)
        a = implicit * f[k]
        x = s[k - 1]
        for iteration in range(1, max_iter + 1):
            x_next = base + a * x ** n
            if abs(x_next - x) <= tol:
                x = x_next
                break
            x = x_next
        else:
            raise SolverError(
                f"fixed point for s did not converge within {max_iter} iterations", node=k
            )
        worst = max(worst, iteration)
        if x < 0.0 or x > 1.0:
            clamped += 1
            x = min(max(x, 0.0), 1.0)
        s[k] = x
        g[k] = f[k] * x ** n

    if clamped:
        logger.warning("s clamped to [0, 1] | nodes=%s h=%s (step too large?)", clamped, h)
    logger.debug("Volterra solve finished | n=%s p=%s nodes=%s max_iterations=%s", n, spec.p, m, worst)
    return Trajectory(grid, {"s": s}, {"clamped": clamped, "max_iterations": worst})


def survival_curve(spec: DiscreteModelSpec, grid: TimeGrid) -> Trajectory:
    solved = solve_s(spec, grid)
    f = self_survival_on_grid(spec.lam, grid)
    survival = (1.0 - spec.p) * f * solved["s"] ** (spec.n + 1)
    return solved.with_series(survival=survival)


def root_tail_curve(spec: DiscreteModelSpec, grid: TimeGrid) -> Trajectory:
    """Tail of the root's infection time on a rooted subtree: (1 - p) f_t s_t^n."""
    solved = solve_s(spec, grid)
    f = self_survival_on_grid(spec.lam, grid)
    return solved.with_series(root_tail=(1.0 - spec.p) * f * solved["s"] ** spec.n)


def expected_susceptible_curve(spec: DiscreteModelSpec, grid: TimeGrid) -> Trajectory:
    """S_{t,n}: survival of a vertex when every edge carries eps / (n + 1)."""
    return survival_curve(spec.scaled(), grid)


def _truncated_at(eps: RateFunction, duration: float) -> RateFunction:
    knots = [k for k in eps._knots if k < duration]
    values = list(eps.values[: len(knots)])
    return RateFunction.piecewise([*knots[1:], duration], [*values, 0.0])


def effective_two_state_solve(spec: DiscreteModelSpec, grid: TimeGrid) -> Trajectory:
    """solve_s for the equivalent model without recovery driven by eps~."""
    if spec.recovery.kind == "never":
        effective = spec.eps
    elif spec.recovery.kind == "deterministic" and spec.eps.kind != "tabulated":
        effective = _truncated_at(spec.eps, spec.recovery.parameter)
    else:
        effective = RateFunction.tabulated(grid.nodes, effective_rate(spec.eps, spec.recovery, grid.nodes))
    return solve_s(replace(spec, eps=effective, recovery=RecoveryDistribution.never()), grid)


def _require_constant_rates(eps: float, lam: float, *, positive: bool = True) -> None:
    if positive and not (eps > 0 and lam > 0):
        raise DomainError(f"closed forms need eps > 0 and lambda > 0, got eps={eps!r} lambda={lam!r}")
    if eps < 0 or lam < 0:
        raise DomainError("rates must be nonnegative")


def closed_form_no_recovery(n: int, eps: float, lam: float, grid: TimeGrid) -> Trajectory:
    """Exact s_t and P(tau > t) for constant rates, no recovery and p = 0."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n!r}")
    _require_constant_rates(eps, lam)
    t = grid.nodes
    if n == 1:
        log_s = -(eps / lam) * (np.exp(-lam * t) - 1.0 + lam * t)
    else:
        a = eps * (n - 1)
        log_s = (math.log(a + lam) - a * t - np.log(a * np.exp(-(a + lam) * t) + lam)) / (n - 1)
    s = np.exp(log_s)
    survival = np.exp(-lam * t + (n + 1) * log_s)
    return Trajectory(grid, {"s": s, "survival": survival})


def logistic_limit_curve(c: float, lam: float, grid: TimeGrid) -> Trajectory:
    """Limit of P(tau <= t) when eps_n * n -> c, no recovery."""
    if lam == 0:
        raise DomainError("logistic limit is degenerate for lambda = 0")
    if not (c > 0 and lam > 0):
        raise DomainError(f"logistic limit needs c > 0 and lambda > 0, got c={c!r} lambda={lam!r}")
    t = grid.nodes
    ratio = lam / c
    infected = (1.0 + ratio) / (1.0 + np.exp(-(c + lam) * t) / ratio) - ratio
    return Trajectory(grid, {"infected": np.clip(infected, 0.0, 1.0)})


def bernoulli_ode_solve(n: int, eps: float, lam: float, grid: TimeGrid) -> Trajectory:
    _require_constant_rates(eps, lam, positive=False)

    def rhs(t: float, s: np.ndarray) -> np.ndarray:
        return -eps * s + eps * math.exp(-lam * t) * s ** n

    return Trajectory(grid, {"s": integrate_rk4(rhs, [1.0], grid)[:, 0]})


def deterministic_recovery_dde_solve(n: int, eps: float, lam: float, duration: float, grid: TimeGrid) -> Trajectory:
    """Method of steps for the lag-H equation of deterministic recovery."""
    _require_constant_rates(eps, lam, positive=False)
    if not duration > 0:
        raise DomainError(f"recovery time H must be positive, got {duration!r}")
    if duration > grid.horizon:
        return bernoulli_ode_solve(n, eps, lam, grid)
    grid.index_of(duration, what="H")
    h = grid.step
    plateau = eps * math.exp(-eps * duration)

    def rhs(t: float, s: np.ndarray, lagged: np.ndarray) -> np.ndarray:
        out = -eps * s + eps * math.exp(-lam * t) * s ** n
        if t > duration + 0.25 * h:
            out = out + plateau - plateau * math.exp(-lam * (t - duration)) * lagged ** n
        return out

    values = integrate_delay_rk4(rhs, [1.0], grid, duration, lambda u: np.ones(1))
    return Trajectory(grid, {"s": values[:, 0]})


def exponential_recovery_ode_solve(n: int, eps: float, lam: float, mu: float, grid: TimeGrid) -> Trajectory:
    _require_constant_rates(eps, lam, positive=False)
    if mu < 0:
        raise DomainError(f"mu must be nonnegative, got {mu!r}")

    def rhs(t: float, s: np.ndarray) -> np.ndarray:
        return -(mu + eps) * s + eps * math.exp(-lam * t) * s ** n + mu

    return Trajectory(grid, {"s": integrate_rk4(rhs, [1.0], grid)[:, 0]})


def observed_order(coarse_error: float, fine_error: float) -> float:
    """Empirical order from errors at h and h/2."""
    if fine_error <= 0:
        return math.inf
    return math.log2(coarse_error / fine_error)


def reference_values(
    solve: Callable[[DiscreteModelSpec, TimeGrid], Trajectory],
    spec: DiscreteModelSpec,
    grid: TimeGrid,
    name: str,
    *,
    max_step: float = REFERENCE_STEP,
) -> np.ndarray:
    """Series ``name`` of ``solve`` on ``grid``, computed on a refinement with step <= max_step."""
    factor = max(1, math.ceil(grid.step / max_step - 1e-9))
    if factor == 1:
        return np.asarray(solve(spec, grid)[name])
    fine = TimeGrid(grid.horizon, grid.step / factor)
    return np.asarray(solve(spec, fine)[name])[::factor]
