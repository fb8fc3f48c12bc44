"""Uniform time grids, trajectories and the lagged quadrature sums shared by the solvers."""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import DomainError, GridAlignmentError

_ALIGN_TOL = 1e-9


@dataclass(frozen=True, slots=True)
class TimeGrid:
    horizon: float
    step: float

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise DomainError(f"grid step must be positive, got h={self.step!r}")
        if self.horizon < 0:
            raise DomainError(f"grid horizon must be nonnegative, got T={self.horizon!r}")
        ratio = self.horizon / self.step
        if abs(ratio - round(ratio)) > _ALIGN_TOL * max(1.0, ratio):
            raise GridAlignmentError("T", self.horizon, self.step)

    @property
    def m(self) -> int:
        return int(round(self.horizon / self.step)) + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.m, dtype=float) * self.step

    @property
    def decimals(self) -> int:
        exponent = Decimal(repr(self.step)).normalize().as_tuple().exponent
        return max(0, -int(exponent))

    def is_aligned(self, t: float) -> bool:
        ratio = t / self.step
        return abs(ratio - round(ratio)) <= _ALIGN_TOL * max(1.0, abs(ratio))

    def index_of(self, t: float, *, what: str = "t") -> int:
        if not self.is_aligned(t):
            raise GridAlignmentError(what, t, self.step)
        return int(round(t / self.step))

    def require_aligned(self, times: Iterable[float], *, what: str) -> None:
        for t in times:
            if t <= self.horizon and not self.is_aligned(t):
                raise GridAlignmentError(what, t, self.step)

    def refined(self) -> "TimeGrid":
        return TimeGrid(self.horizon, self.step / 2)

    def coarsened(self) -> "TimeGrid":
        return TimeGrid(self.horizon, self.step * 2)


@dataclass(frozen=True, slots=True)
class Trajectory:
    grid: TimeGrid
    series: Mapping[str, np.ndarray]
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, values in self.series.items():
            if np.shape(values) != (self.grid.m,):
                raise DomainError(
                    f"series '{name}' has shape {np.shape(values)}, expected ({self.grid.m},)"
                )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def __contains__(self, name: object) -> bool:
        return name in self.series

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.series)

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def with_series(self, **extra: np.ndarray) -> "Trajectory":
        merged = dict(self.series)
        merged.update(extra)
        return Trajectory(self.grid, merged, dict(self.meta))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.t})
        for name, values in self.series.items():
            frame[name] = np.asarray(values, dtype=float)
        return frame


def max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0


def trapezoid_lag_sum(g: np.ndarray, kernel_left: np.ndarray, kernel_mid: np.ndarray, k: int) -> float:
    """Explicit part of the trapezoid rule for sum_j g_j K(t_k - u_j).

    Returns ``g_0 K_L(t_k)/2 + sum_{j=1}^{k-1} g_j K_M(t_k - u_j)``; the
    ``j = k`` endpoint is left to the caller because it carries the unknown.
    ``kernel_mid`` holds the average of the left and right limits so that a
    jump of K landing on a node is split between its two segments.
    """
    if k == 0:
        return 0.0
    total = 0.5 * g[0] * kernel_left[k]
    if k > 1:
        total += float(np.dot(g[1:k], kernel_mid[k - 1:0:-1]))
    return float(total)


def stieltjes_lag_sum(increments: np.ndarray, kernel_left: np.ndarray, kernel_right: np.ndarray, k: int) -> float:
    """sum over segments j of dX_j times the segment average of K(t_k - u).

    ``increments[j] = X_j - X_{j-1}`` for j >= 1 (index 0 is ignored). On the
    segment [u_{j-1}, u_j] the lag runs over [(k-j)h, (k-j+1)h], so the right
    limit is taken at the lower lag and the left limit at the upper one.
    """
    if k == 0:
        return 0.0
    averaged = 0.5 * (kernel_right[k - 1::-1][:k] + kernel_left[k:0:-1])
    return float(np.dot(increments[1:k + 1], averaged))
