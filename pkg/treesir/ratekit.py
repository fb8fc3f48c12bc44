"""Rate functions, recovery laws and the per-edge survival primitives.

Everything the tree model needs from a single infected neighbour is derived
here from two objects: the infection rate profile ``eps`` (rate at time
``t`` after the neighbour got infected) and the recovery law ``H``.

    A(t)      = int_0^t eps_u du                      cumulative_rate
    f_t       = exp(-int_0^t lambda_u du)             self_survival
    phi_t     = E exp(-A(t ^ H))                      neighbor_survival
    phi'_t    = -eps_t exp(-A(t)) beta_t              neighbor_survival_derivative
    gamma_t   = eps_t beta_t                          gamma_rate
    eps~_t    = -phi'_t / phi_t                       effective_rate

Rates are restricted to a closed set of kinds so that the integrals above
are exact wherever possible.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal, Mapping, Sequence, Union

import numpy as np
from scipy import integrate

from .errors import DomainError, HorizonError, SingularityError
from .grid import TimeGrid

Side = Literal["left", "right"]
TimeLike = Union[float, np.ndarray]

RATE_KINDS = ("constant", "piecewise", "latent-window", "tabulated")
RECOVERY_KINDS = ("deterministic", "exponential", "never", "tabulated-tail")

DEFAULT_QUAD_STEP = 1e-3


def _result(t: TimeLike, values: np.ndarray) -> TimeLike:
    return float(values) if np.ndim(t) == 0 else values


def _check_side(side: str) -> None:
    if side not in ("left", "right"):
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")


def _as_floats(raw: Iterable[Any], name: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"{name} must be a sequence of numbers") from exc
    if any(not math.isfinite(v) for v in values):
        raise DomainError(f"{name} must be finite")
    return values


@dataclass(frozen=True, slots=True)
class RateFunction:
    """Nonnegative time-varying rate; zero for t < 0.

    ``constant``, ``piecewise`` and ``latent-window`` share a piecewise
    constant representation: ``values[i]`` holds on ``[knots[i], knots[i+1])``
    with ``knots = (0,) + breakpoints``. ``tabulated`` interpolates linearly
    between ``(breakpoints, values)`` and holds the last value afterwards.
    """

    kind: str
    breakpoints: tuple[float, ...] = ()
    values: tuple[float, ...] = (0.0,)
    _knots: list = field(init=False, repr=False, compare=False)
    _cum: list = field(init=False, repr=False, compare=False)
    _slopes: list = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in RATE_KINDS:
            raise DomainError(f"unknown rate kind {self.kind!r}; expected one of {RATE_KINDS}")
        if any(v < 0 for v in self.values):
            raise DomainError(f"{self.kind} rate values must be nonnegative")

        if self.kind == "tabulated":
            grid = self.breakpoints
            if len(grid) < 2 or len(grid) != len(self.values):
                raise DomainError("tabulated rate needs matching grid and values with at least two nodes")
            if grid[0] != 0.0:
                raise DomainError("tabulated rate grid must start at 0")
            knots = list(grid)
            vals = np.asarray(self.values, dtype=float)
            cum = integrate.cumulative_trapezoid(vals, np.asarray(grid), initial=0.0).tolist()
            slopes = (np.diff(vals) / np.diff(grid)).tolist() + [0.0]
        else:
            if len(self.values) != len(self.breakpoints) + 1:
                raise DomainError("piecewise rate needs exactly one more value than breakpoints")
            if self.breakpoints and self.breakpoints[0] <= 0:
                raise DomainError("breakpoints must be positive")
            knots = [0.0, *self.breakpoints]
            cum = [0.0]
            for i in range(1, len(knots)):
                cum.append(cum[-1] + self.values[i - 1] * (knots[i] - knots[i - 1]))
            slopes = [0.0] * len(knots)
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise DomainError("breakpoints must be strictly increasing")

        object.__setattr__(self, "_knots", knots)
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "_slopes", slopes)

    @classmethod
    def constant(cls, value: float) -> "RateFunction":
        return cls("constant", (), _as_floats([value], "value"))

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], values: Sequence[float]) -> "RateFunction":
        return cls("piecewise", _as_floats(breakpoints, "breakpoints"), _as_floats(values, "values"))

    @classmethod
    def latent_window(cls, level: float, latency: float) -> "RateFunction":
        if latency < 0:
            raise DomainError(f"latency must be nonnegative, got {latency!r}")
        if latency == 0:
            return cls("latent-window", (), _as_floats([level], "level"))
        return cls("latent-window", (float(latency),), (0.0, float(level)))

    @classmethod
    def tabulated(cls, grid: Sequence[float], values: Sequence[float]) -> "RateFunction":
        return cls("tabulated", _as_floats(grid, "grid"), _as_floats(values, "values"))

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "RateFunction":
        kind = spec.get("kind")
        if kind == "constant":
            return cls.constant(spec["value"])
        if kind == "piecewise":
            return cls.piecewise(spec["breakpoints"], spec["values"])
        if kind == "latent-window":
            return cls.latent_window(float(spec["level"]), float(spec["latency"]))
        if kind == "tabulated":
            return cls.tabulated(spec["grid"], spec["values"])
        raise DomainError(f"unknown rate kind {kind!r}; expected one of {RATE_KINDS}")

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.values[0]}
        if self.kind == "latent-window":
            return {"kind": "latent-window", "level": self.values[-1], "latency": self.latency}
        if self.kind == "tabulated":
            return {"kind": "tabulated", "grid": list(self.breakpoints), "values": list(self.values)}
        return {"kind": "piecewise", "breakpoints": list(self.breakpoints), "values": list(self.values)}

    @property
    def latency(self) -> float:
        return self.breakpoints[0] if self.kind == "latent-window" and self.breakpoints else 0.0

    @property
    def constant_value(self) -> float | None:
        """The rate if it is the same for every t >= 0, else None."""
        return self.values[0] if len(set(self.values)) == 1 else None

    @property
    def is_zero(self) -> bool:
        return all(v == 0 for v in self.values)

    def value(self, t: TimeLike, side: Side = "right") -> TimeLike:
        _check_side(side)
        ts = np.asarray(t, dtype=float)
        knots = np.asarray(self._knots)
        vals = np.asarray(self.values, dtype=float)
        if self.kind == "tabulated":
            out = np.interp(ts, knots, vals)
        else:
            idx = np.searchsorted(knots, ts, side=side) - 1
            out = vals[np.clip(idx, 0, len(vals) - 1)]
        outside = ts < 0 if side == "right" else ts <= 0
        return _result(t, np.where(outside, 0.0, out))

    def cumulative(self, t: TimeLike) -> TimeLike:
        ts = np.asarray(t, dtype=float)
        if np.any(ts < 0):
            raise DomainError("cumulative rate is defined for t >= 0 only")
        knots = np.asarray(self._knots)
        cum = np.asarray(self._cum)
        vals = np.asarray(self.values, dtype=float)
        idx = np.clip(np.searchsorted(knots, ts, side="right") - 1, 0, len(knots) - 1)
        x = ts - knots[idx]
        out = cum[idx] + vals[idx] * x
        if self.kind == "tabulated":
            out = out + 0.5 * np.asarray(self._slopes)[idx] * x * x
        return _result(t, out)

    def invert(self, y: float) -> float:
        """Smallest t with cumulative(t) = y, or inf when the rate runs out first."""
        if y <= 0:
            return 0.0
        cum = self._cum
        i = bisect.bisect_left(cum, y) - 1
        v = self.values[i]
        r = y - cum[i]
        last = len(cum) - 1
        if self.kind != "tabulated" or i == last:
            return self._knots[i] + r / v if v > 0 else math.inf
        a = 0.5 * self._slopes[i]
        disc = max(v * v + 4.0 * a * r, 0.0)
        denom = v + math.sqrt(disc)
        x = 2.0 * r / denom if denom > 0 else 0.0
        return self._knots[i] + x

    def total(self) -> float:
        return math.inf if self.values[-1] > 0 else float(self._cum[-1])

    def kinks(self) -> tuple[float, ...]:
        """Times where the rate jumps."""
        if self.kind == "tabulated":
            return ()
        return tuple(
            self._knots[i] for i in range(1, len(self._knots)) if self.values[i] != self.values[i - 1]
        )

    def scaled(self, factor: float) -> "RateFunction":
        if factor < 0:
            raise DomainError("rate scale factor must be nonnegative")
        return RateFunction(self.kind, self.breakpoints, tuple(v * factor for v in self.values))


@dataclass(frozen=True, slots=True)
class RecoveryDistribution:
    """Law of the recovery time H, described by its tail beta_t = P(H > t)."""

    kind: str
    parameter: float = math.inf
    grid: tuple[float, ...] = ()
    tail_values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in RECOVERY_KINDS:
            raise DomainError(f"unknown recovery kind {self.kind!r}; expected one of {RECOVERY_KINDS}")
        if self.kind in ("deterministic", "exponential") and not (0 < self.parameter < math.inf):
            name = "H" if self.kind == "deterministic" else "mu"
            raise DomainError(f"{self.kind} recovery needs a positive finite {name}, got {self.parameter!r}")
        if self.kind == "tabulated-tail":
            tail = self.tail_values
            if len(self.grid) < 2 or len(self.grid) != len(tail):
                raise DomainError("tabulated tail needs matching grid and tail values with at least two nodes")
            if self.grid[0] != 0.0 or any(b <= a for a, b in zip(self.grid, self.grid[1:])):
                raise DomainError("tabulated tail grid must start at 0 and be strictly increasing")
            if tail[0] != 1.0:
                raise DomainError("tabulated tail must start at beta_0 = 1")
            if any(not 0.0 <= b <= 1.0 for b in tail) or any(b > a for a, b in zip(tail, tail[1:])):
                raise DomainError("tabulated tail must be non-increasing within [0, 1]")

    @classmethod
    def deterministic(cls, duration: float) -> "RecoveryDistribution":
        return cls("deterministic", float(duration))

    @classmethod
    def exponential(cls, mu: float) -> "RecoveryDistribution":
        return cls("exponential", float(mu))

    @classmethod
    def never(cls) -> "RecoveryDistribution":
        return cls("never")

    @classmethod
    def tabulated_tail(cls, grid: Sequence[float], tail: Sequence[float]) -> "RecoveryDistribution":
        return cls("tabulated-tail", math.inf, _as_floats(grid, "grid"), _as_floats(tail, "tail"))

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "RecoveryDistribution":
        kind = spec.get("kind")
        if kind == "deterministic":
            return cls.deterministic(float(spec["H"]))
        if kind == "exponential":
            return cls.exponential(float(spec["mu"]))
        if kind == "never":
            return cls.never()
        if kind == "tabulated-tail":
            return cls.tabulated_tail(spec["grid"], spec["tail"])
        raise DomainError(f"unknown recovery kind {kind!r}; expected one of {RECOVERY_KINDS}")

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "deterministic":
            return {"kind": "deterministic", "H": self.parameter}
        if self.kind == "exponential":
            return {"kind": "exponential", "mu": self.parameter}
        if self.kind == "tabulated-tail":
            return {"kind": "tabulated-tail", "grid": list(self.grid), "tail": list(self.tail_values)}
        return {"kind": "never"}

    @property
    def duration(self) -> float:
        return self.parameter if self.kind == "deterministic" else math.inf

    @property
    def mu(self) -> float:
        return self.parameter if self.kind == "exponential" else 0.0

    @property
    def horizon(self) -> float:
        """Last time the tail is known at; inf for analytic kinds."""
        if self.kind != "tabulated-tail" or self.tail_values[-1] == 0.0:
            return math.inf
        return self.grid[-1]

    def tail(self, t: TimeLike, side: Side = "right") -> TimeLike:
        _check_side(side)
        ts = np.asarray(t, dtype=float)
        if self.kind == "never":
            out = np.ones_like(ts)
        elif self.kind == "deterministic":
            alive = ts < self.parameter if side == "right" else ts <= self.parameter
            out = np.where(alive, 1.0, 0.0)
        elif self.kind == "exponential":
            out = np.exp(-self.parameter * np.maximum(ts, 0.0))
        else:
            out = self._tabulated_tail(ts)
        return _result(t, np.where(ts < 0, 1.0, out))

    def _tabulated_tail(self, ts: np.ndarray) -> np.ndarray:
        grid = np.asarray(self.grid)
        tail = np.asarray(self.tail_values)
        if np.any(ts > grid[-1]) and tail[-1] > 0:
            raise HorizonError(
                f"tabulated tail known up to t={grid[-1]!r}, evaluated at t={float(np.max(ts))!r}"
            )
        idx = np.clip(np.searchsorted(grid, ts, side="right") - 1, 0, len(grid) - 2)
        lo, hi = tail[idx], tail[idx + 1]
        theta = np.clip((ts - grid[idx]) / (grid[idx + 1] - grid[idx]), 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            loglinear = np.exp((1.0 - theta) * np.log(lo) + theta * np.log(hi))
        out = np.where(hi > 0, loglinear, (1.0 - theta) * lo)
        return np.where(ts >= grid[-1], tail[-1], out)

    def kinks(self) -> tuple[float, ...]:
        return (self.parameter,) if self.kind == "deterministic" else ()

    def sample(self, u: float) -> float:
        """Recovery time from a uniform u in (0, 1] by inverting the tail."""
        if self.kind == "never":
            return math.inf
        if self.kind == "deterministic":
            return self.parameter
        if self.kind == "exponential":
            return -math.log(u) / self.parameter
        tail = self.tail_values
        grid = self.grid
        for j in range(len(tail) - 1):
            hi = tail[j + 1]
            if hi < u:
                lo = tail[j]
                if hi > 0:
                    theta = (math.log(u) - math.log(lo)) / (math.log(hi) - math.log(lo))
                else:
                    theta = (lo - u) / lo
                return grid[j] + theta * (grid[j + 1] - grid[j])
        return math.inf


# --- primitives -----------------------------------------------------------------


def cumulative_rate(r: RateFunction, t: TimeLike) -> TimeLike:
    if np.any(np.asarray(t) < 0):
        raise DomainError(f"cumulative_rate needs t >= 0, got {t!r}")
    return r.cumulative(t)


def invert_cumulative(r: RateFunction, y: float) -> float:
    return r.invert(y)


def total_rate(r: RateFunction) -> float:
    return r.total()


def scaled(r: RateFunction, factor: float) -> RateFunction:
    return r.scaled(factor)


def sample_recovery(recovery: RecoveryDistribution, u: float) -> float:
    return recovery.sample(u)


def self_survival(lam: RateFunction, t: TimeLike) -> TimeLike:
    ts = np.asarray(t, dtype=float)
    out = np.exp(-lam.cumulative(np.maximum(ts, 0.0)))
    return _result(t, np.where(ts < 0, 1.0, out))


def _stieltjes_survival(eps: RateFunction, recovery: RecoveryDistribution, nodes: np.ndarray) -> np.ndarray:
    """phi on ascending nodes from int e^{-A} dF_H + e^{-A(t)} beta_t, trapezoid in u."""
    decay = np.exp(-eps.cumulative(nodes))
    tail = np.asarray(recovery.tail(nodes), dtype=float)
    pieces = 0.5 * (decay[:-1] + decay[1:]) * (tail[:-1] - tail[1:])
    return np.concatenate(([0.0], np.cumsum(pieces))) + decay * tail


def _closed_form_survival(eps: RateFunction, recovery: RecoveryDistribution, ts: np.ndarray) -> np.ndarray | None:
    if recovery.kind == "never":
        return np.exp(-eps.cumulative(ts))
    if recovery.kind == "deterministic":
        return np.exp(-eps.cumulative(np.minimum(ts, recovery.parameter)))
    level = eps.constant_value
    if recovery.kind == "exponential" and level is not None:
        mu = recovery.parameter
        return mu / (mu + level) + level / (mu + level) * np.exp(-(mu + level) * ts)
    return None


def neighbor_survival(
    eps: RateFunction,
    recovery: RecoveryDistribution,
    t: TimeLike,
    *,
    step: float = DEFAULT_QUAD_STEP,
) -> TimeLike:
    """phi_t: probability an infectious neighbour infected at 0 has not transmitted by t."""
    ts = np.asarray(t, dtype=float)
    clipped = np.maximum(ts, 0.0)
    closed = _closed_form_survival(eps, recovery, clipped)
    if closed is None:
        flat = clipped.reshape(-1)
        closed = np.empty_like(flat)
        for i, ti in enumerate(flat):
            count = max(2, int(math.ceil(ti / step)) + 1)
            closed[i] = _stieltjes_survival(eps, recovery, np.linspace(0.0, ti, count))[-1]
        closed = closed.reshape(clipped.shape)
    return _result(t, np.where(ts < 0, 1.0, closed))


def neighbor_survival_derivative(
    eps: RateFunction,
    recovery: RecoveryDistribution,
    t: TimeLike,
    side: Side = "right",
) -> TimeLike:
    ts = np.asarray(t, dtype=float)
    clipped = np.maximum(ts, 0.0)
    out = -np.asarray(eps.value(ts, side)) * np.exp(-eps.cumulative(clipped)) * np.asarray(recovery.tail(ts, side))
    return _result(t, np.where(ts < 0, 0.0, out))


def gamma_rate(eps: RateFunction, recovery: RecoveryDistribution, t: TimeLike, side: Side = "right") -> TimeLike:
    ts = np.asarray(t, dtype=float)
    out = np.asarray(eps.value(ts, side)) * np.asarray(recovery.tail(ts, side))
    return _result(t, np.where(ts < 0, 0.0, out))


def effective_rate(eps: RateFunction, recovery: RecoveryDistribution, t: TimeLike, side: Side = "right") -> TimeLike:
    phi = np.asarray(neighbor_survival(eps, recovery, t))
    if np.any(phi <= 0):
        raise SingularityError("effective rate is undefined where phi_t = 0")
    dphi = np.asarray(neighbor_survival_derivative(eps, recovery, t, side))
    return _result(t, -dphi / phi)


def derivative_kinks(eps: RateFunction, recovery: RecoveryDistribution) -> tuple[float, ...]:
    """Times where phi' and gamma jump."""
    return tuple(sorted(set(eps.kinks()) | set(recovery.kinks())))


def gamma_total(eps: RateFunction, recovery: RecoveryDistribution) -> float:
    """int_0^inf gamma_u du = E int_0^H eps_u du."""
    if recovery.kind == "never":
        return eps.total()
    if recovery.kind == "deterministic":
        return float(eps.cumulative(recovery.parameter))
    if recovery.kind == "exponential":
        mu = recovery.parameter
        if eps.kind != "tabulated":
            knots = [*eps._knots, math.inf]
            return float(
                sum(
                    v * (math.exp(-mu * a) - math.exp(-mu * b)) / mu
                    for v, a, b in zip(eps.values, knots[:-1], knots[1:])
                )
            )
        end = eps.breakpoints[-1]
        body, _ = integrate.quad(
            lambda u: float(eps.value(u)) * math.exp(-mu * u),
            0.0,
            end,
            points=eps.breakpoints[1:-1] or None,
            limit=max(50, 4 * len(eps.breakpoints)),
            epsabs=1e-13,
        )
        return body + eps.values[-1] * math.exp(-mu * end) / mu
    if recovery.tail_values[-1] > 0:
        raise HorizonError("gamma total needs a tabulated tail that reaches 0")
    points = sorted(set(recovery.grid[1:-1]) | set(eps.breakpoints) - {0.0})
    end = recovery.grid[-1]
    body, _ = integrate.quad(
        lambda u: float(eps.value(u)) * float(recovery.tail(u)),
        0.0,
        end,
        points=[p for p in points if 0 < p < end] or None,
        limit=max(50, 4 * len(points)),
        epsabs=1e-13,
    )
    return body


# --- grid samplers ------------------------------------------------------------------


def self_survival_on_grid(lam: RateFunction, grid: TimeGrid) -> np.ndarray:
    return np.asarray(self_survival(lam, grid.nodes))


def neighbor_survival_on_grid(eps: RateFunction, recovery: RecoveryDistribution, grid: TimeGrid) -> np.ndarray:
    nodes = grid.nodes
    closed = _closed_form_survival(eps, recovery, nodes)
    return closed if closed is not None else _stieltjes_survival(eps, recovery, nodes)


def derivative_on_grid(
    eps: RateFunction, recovery: RecoveryDistribution, grid: TimeGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Left and right limits of phi' at every lag node."""
    nodes = grid.nodes
    return (
        np.asarray(neighbor_survival_derivative(eps, recovery, nodes, "left")),
        np.asarray(neighbor_survival_derivative(eps, recovery, nodes, "right")),
    )


def gamma_on_grid(
    eps: RateFunction, recovery: RecoveryDistribution, grid: TimeGrid
) -> tuple[np.ndarray, np.ndarray]:
    nodes = grid.nodes
    return (
        np.asarray(gamma_rate(eps, recovery, nodes, "left")),
        np.asarray(gamma_rate(eps, recovery, nodes, "right")),
    )
