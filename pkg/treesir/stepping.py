"""Fixed-step classical Runge-Kutta integration, with a method-of-steps variant for one constant lag."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from .grid import TimeGrid

Rhs = Callable[[float, np.ndarray], np.ndarray]
DelayRhs = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
History = Callable[[float], np.ndarray]
Guard = Callable[[int, np.ndarray], None]


def rk4_step(rhs: Rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(rhs: Rhs, y0: np.ndarray, grid: TimeGrid, *, guard: Optional[Guard] = None) -> np.ndarray:
    """Values at every grid node, shape (m, dim)."""
    y = np.atleast_1d(np.asarray(y0, dtype=float))
    out = np.empty((grid.m, y.size))
    out[0] = y
    h = grid.step
    for k in range(grid.m - 1):
        y = rk4_step(rhs, k * h, y, h)
        if guard is not None:
            guard(k + 1, y)
        out[k + 1] = y
    return out


def hermite(y0: np.ndarray, y1: np.ndarray, d0: np.ndarray, d1: np.ndarray, h: float, theta: float) -> np.ndarray:
    t2 = theta * theta
    t3 = t2 * theta
    return (
        (2 * t3 - 3 * t2 + 1) * y0
        + (t3 - 2 * t2 + theta) * h * d0
        + (-2 * t3 + 3 * t2) * y1
        + (t3 - t2) * h * d1
    )


def integrate_delay_rk4(
    rhs: DelayRhs,
    y0: np.ndarray,
    grid: TimeGrid,
    lag: float,
    history: History,
    *,
    guard: Optional[Guard] = None,
) -> np.ndarray:
    """Method of steps for y'(t) = rhs(t, y(t), y(t - lag)).

    The lag must be a positive multiple of h. Delayed stage values come from
    the cubic Hermite interpolant of the already computed interval they fall
    in, built from the one-sided derivatives of that interval, so jumps of y'
    at nodes stay sharp. Delayed times in an interval before 0 use
    ``history``.
    """
    if lag <= 0:
        raise DomainError(f"delay lag must be positive, got {lag!r}")
    lag_steps = grid.index_of(lag, what="lag")
    h = grid.step
    y = np.atleast_1d(np.asarray(y0, dtype=float))
    values = np.empty((grid.m, y.size))
    slope_right = np.zeros((grid.m, y.size))
    slope_left = np.zeros((grid.m, y.size))
    values[0] = y

    def delayed(j: int, theta: float) -> np.ndarray:
        i = j - lag_steps
        if i < 0:
            return np.atleast_1d(np.asarray(history((j + theta) * h - lag), dtype=float))
        return hermite(values[i], values[i + 1], slope_right[i], slope_left[i + 1], h, theta)

    for j in range(grid.m - 1):
        t = j * h
        z_mid = delayed(j, 0.5)
        z_end = delayed(j, 1.0)
        k1 = rhs(t, y, delayed(j, 0.0))
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, z_mid)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, z_mid)
        k4 = rhs(t + h, y + h * k3, z_end)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        slope_right[j] = k1
        slope_left[j + 1] = rhs(t + h, y, z_end)
        if guard is not None:
            guard(j + 1, y)
        values[j + 1] = y
    return values
