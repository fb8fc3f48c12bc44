"""Kernel form of the continuous SIR equations.

For a kernel source g and recovery tail beta the kernel K(g) is the inverse
Laplace transform of L{g} / L{beta}, and

    S' = -S (lambda_t + int I_u K(gamma)_{t-u} du)
    I' =  S (lambda_t + int I_u K(gamma)_{t-u} du) - int I_u K(-beta')_{t-u} du
    R' =  int I_u K(-beta')_{t-u} du

Only pairs whose transform ratio is known in closed form are supported:

    gamma = eps beta, eps constant, any beta   -> eps * delta_0
    gamma = eps 1{t >= L}, beta = 1            -> eps * delta_L
    -beta', beta = exp(-mu t)                  -> mu * delta_0
    -beta', beta = 1                           -> 0
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .continuum import ContinuousModelSpec
from .errors import CatalogError, DomainError
from .grid import TimeGrid, Trajectory, trapezoid_lag_sum
from .ratekit import RateFunction, RecoveryDistribution
from .stepping import integrate_delay_rk4, integrate_rk4

logger = logging.getLogger(__name__)

KernelSource = Literal["gamma", "recovery-flux"]


@dataclass(frozen=True, slots=True)
class KernelRepresentation:
    """atom * delta_{lag} plus an optional smooth density in the lag variable."""

    atom: float
    provenance: str
    lag: float = 0.0
    smooth: Optional[RateFunction] = None

    def __post_init__(self) -> None:
        if self.atom < 0:
            raise DomainError(f"kernel atom must be nonnegative, got {self.atom!r}")
        if self.lag < 0:
            raise DomainError(f"kernel atom lag must be nonnegative, got {self.lag!r}")

    @property
    def is_atomic(self) -> bool:
        return self.smooth is None or self.smooth.is_zero

    def convolve(self, values: np.ndarray, grid: TimeGrid, k: int) -> float:
        """int_0^{t_k} values_u K_{t_k - u} du, values taken as 0 before time 0."""
        total = 0.0
        if self.atom:
            j = k - grid.index_of(self.lag, what="kernel lag")
            total += self.atom * values[j] if j >= 0 else 0.0
        if not self.is_atomic and k > 0:
            smooth = np.asarray(self.smooth.value(grid.nodes[: k + 1]))
            total += grid.step * (trapezoid_lag_sum(values, smooth, smooth, k) + 0.5 * values[k] * smooth[0])
        return total


def kernel_of(source: KernelSource, beta: RecoveryDistribution, eps: Optional[RateFunction] = None) -> KernelRepresentation:
    if source == "gamma":
        if eps is None:
            raise CatalogError("the gamma kernel needs the infectivity profile eps")
        level = eps.constant_value
        if level is not None:
            return KernelRepresentation(level, f"gamma=eps*beta, eps={level}, beta={beta.kind}")
        if eps.kind == "latent-window" and beta.kind == "never":
            return KernelRepresentation(
                eps.values[-1], f"gamma=eps*1{{t>=L}}, L={eps.latency}, beta=never", lag=eps.latency
            )
        raise CatalogError(f"no closed-form kernel for (g=gamma with {eps.kind} eps, beta={beta.kind})")
    if source == "recovery-flux":
        if beta.kind == "exponential":
            return KernelRepresentation(beta.mu, f"g=-beta', beta=exp(-{beta.mu} t)")
        if beta.kind == "never":
            return KernelRepresentation(0.0, "g=-beta', beta=never")
        raise CatalogError(f"no closed-form kernel for (g=-beta', beta={beta.kind})")
    raise CatalogError(f"unknown kernel source {source!r}; expected 'gamma' or 'recovery-flux'")


def solve_kernel_system(spec: ContinuousModelSpec, grid: TimeGrid) -> Trajectory:
    """(S, I, R) from the kernel form; atom-only kernels reduce it to a (delay) ODE.

    ``pressure`` is int I_u K(gamma)_{t-u} du on the grid.
    """
    infection = kernel_of("gamma", spec.recovery, spec.eps)
    recovery = kernel_of("recovery-flux", spec.recovery)
    if infection.lag != 0 and recovery.atom:
        raise CatalogError("a delayed infection kernel is only catalogued without recovery")
    if not (infection.is_atomic and recovery.is_atomic):
        raise CatalogError("kernel system stepping supports atom-only kernels")
    a, b, lam = infection.atom, recovery.atom, spec.lam
    y0 = [spec.S0, spec.I0, 0.0]
    logger.debug("Kernel system | %s | %s", infection.provenance, recovery.provenance)

    def flows(t: float, y: np.ndarray, pressure: float) -> np.ndarray:
        force = y[0] * (float(lam.value(t)) + pressure)
        return np.array([-force, force - b * y[1], b * y[1]])

    if infection.lag == 0:
        values = integrate_rk4(lambda t, y: flows(t, y, a * y[1]), y0, grid)
    elif infection.lag > grid.horizon:
        values = integrate_rk4(lambda t, y: flows(t, y, 0.0), y0, grid)
    else:
        values = integrate_delay_rk4(
            lambda t, y, z: flows(t, y, a * z[1]), y0, grid, infection.lag, lambda u: np.zeros(3)
        )
    infected = values[:, 1]
    if infection.lag <= grid.horizon:
        pressure = np.array([infection.convolve(infected, grid, k) for k in range(grid.m)])
    else:
        pressure = np.zeros(grid.m)
    return Trajectory(
        grid,
        {"S": values[:, 0], "I": infected, "R": values[:, 2], "pressure": pressure},
        {"gamma_kernel": infection.provenance, "recovery_kernel": recovery.provenance},
    )
