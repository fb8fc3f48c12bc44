"""Monte Carlo estimates of the time to infection on truncated homogeneous trees.

A susceptible target vertex is infected at

    tau = min over vertices w of  source_w + sum of edge delays on the path w -> target,

where ``source_w`` is 0 for an initially infected vertex and its
self-infection time otherwise, and the delay of the edge ``y -> x`` is the
first transmission clock of ``y`` if it fires before ``y`` recovers (else
the edge is closed). The minimum is found by a first-passage search from
the target outwards, so only the vertices that can still beat the current
best are ever sampled. Trees are never materialized.

Truncation at depth D is bracketed: the optimistic bound keeps the depth-D
vertices' own sources (their children never transmit), the pessimistic
bound treats every depth-D vertex as infected at time 0. Both come out of
the same search, so the two estimates share their random numbers.
"""
from __future__ import annotations

import heapq
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Literal, Optional

import numpy as np
from scipy import stats
from tqdm import tqdm

from .config import Settings, load_settings
from .discrete_solver import DiscreteModelSpec, reference_values, root_tail_curve
from .errors import DomainError, PreconditionError
from .grid import TimeGrid, Trajectory
from .ratekit import RateFunction, RecoveryDistribution

logger = logging.getLogger(__name__)

Boundary = Literal["optimistic", "pessimistic"]
Target = Literal["time-to-infection", "expected-susceptible", "root"]

SEED_LIMIT = 2 ** 64
Z_THRESHOLD = 3.0


@dataclass(frozen=True, slots=True)
class TruncationConfig:
    depth: int
    boundary: Boundary = "optimistic"

    def __post_init__(self) -> None:
        if isinstance(self.depth, bool) or not isinstance(self.depth, int) or self.depth < 1:
            raise PreconditionError(f"truncation depth must be an integer >= 1, got {self.depth!r}")
        if self.boundary not in ("optimistic", "pessimistic"):
            raise DomainError(f"boundary must be 'optimistic' or 'pessimistic', got {self.boundary!r}")


@dataclass(frozen=True, slots=True)
class SimulationResult:
    grid: TimeGrid
    survival_lo: np.ndarray
    survival_hi: np.ndarray
    stderr: np.ndarray
    replicas: int
    seed: int
    depth: int = 0
    target: str = "time-to-infection"
    branch_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def survival_mid(self) -> np.ndarray:
        return 0.5 * (self.survival_lo + self.survival_hi)

    @property
    def bracket_width(self) -> float:
        return float(np.max(self.survival_hi - self.survival_lo))

    def survival(self, boundary: Optional[Boundary] = None) -> np.ndarray:
        if boundary is None:
            return self.survival_mid
        return self.survival_hi if boundary == "optimistic" else self.survival_lo

    def to_trajectory(self) -> Trajectory:
        return Trajectory(
            self.grid,
            {
                "survival_lo": self.survival_lo,
                "survival_hi": self.survival_hi,
                "stderr": self.stderr,
            },
            {"replicas": self.replicas, "seed": self.seed, "depth": self.depth, "target": self.target},
        )


@dataclass(frozen=True, slots=True)
class CurveComparison:
    z: np.ndarray
    z_max: float
    max_abs_diff: float
    bracket_width: float
    passed: bool


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    """Counter-based stream for one replica, keyed by (seed, replica index)."""
    return np.random.Generator(np.random.Philox(key=seed | (replica << 64)))


# --- one replica ------------------------------------------------------------------


@dataclass(slots=True)
class _Sampler:
    n: int
    p: float
    eps: RateFunction
    lam: RateFunction
    recovery: RecoveryDistribution

    def source(self, rng: np.random.Generator) -> float:
        if self.p > 0 and rng.random() < self.p:
            return 0.0
        return self.lam.invert(rng.standard_exponential())

    def delay(self, rng: np.random.Generator) -> float:
        clock = self.eps.invert(rng.standard_exponential())
        if self.recovery.kind == "never":
            return clock
        recovery_time = self.recovery.sample(1.0 - rng.random())
        return clock if clock <= recovery_time else math.inf


def _first_passage(
    sampler: _Sampler, depth: int, horizon: float, rng: np.random.Generator, *, rooted: bool
) -> tuple[float, float, int]:
    """(optimistic tau, pessimistic tau, delivering branch or -1) for one replica."""
    n = sampler.n
    best_hi = sampler.source(rng)
    best_lo = best_hi
    branch = -1
    frontier: list[tuple[float, int, int, int]] = []
    order = 0

    def expand(cost: float, level: int, origin: int, fanout: int) -> None:
        nonlocal order
        for i in range(fanout):
            d = sampler.delay(rng)
            if math.isfinite(d):
                order += 1
                heapq.heappush(frontier, (cost + d, order, level + 1, origin if origin >= 0 else i))

    expand(0.0, 0, -1, n if rooted else n + 1)
    while frontier:
        cost, _, level, origin = frontier[0]
        if cost >= best_hi or cost > horizon:
            break
        heapq.heappop(frontier)
        own = sampler.source(rng)
        if cost + own < best_hi:
            best_hi = cost + own
            branch = origin
        if level == depth:
            best_lo = min(best_lo, cost)
        else:
            best_lo = min(best_lo, cost + own)
            expand(cost, level, origin, n)
    return best_hi, min(best_lo, best_hi), branch


def _block_payload(spec: DiscreteModelSpec) -> dict[str, Any]:
    return {
        "n": spec.n,
        "p": spec.p,
        "eps": spec.eps.to_dict(),
        "lam": spec.lam.to_dict(),
        "recovery": spec.recovery.to_dict(),
    }


def _run_block(
    payload: dict[str, Any],
    depth: int,
    nodes: np.ndarray,
    seed: int,
    start: int,
    stop: int,
    rooted: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sampler = _Sampler(
        n=payload["n"],
        p=payload["p"],
        eps=RateFunction.from_dict(payload["eps"]),
        lam=RateFunction.from_dict(payload["lam"]),
        recovery=RecoveryDistribution.from_dict(payload["recovery"]),
    )
    horizon = float(nodes[-1])
    m = len(nodes)
    hi_idx = np.empty(stop - start, dtype=np.int64)
    lo_idx = np.empty(stop - start, dtype=np.int64)
    branches = np.zeros(sampler.n + 1, dtype=np.int64)
    for j, replica in enumerate(range(start, stop)):
        tau_hi, tau_lo, branch = _first_passage(sampler, depth, horizon, replica_rng(seed, replica), rooted=rooted)
        hi_idx[j] = np.searchsorted(nodes, tau_hi, side="left")
        lo_idx[j] = np.searchsorted(nodes, tau_lo, side="left")
        if branch >= 0 and tau_hi <= horizon:
            branches[branch] += 1
    return _survivor_counts(hi_idx, m), _survivor_counts(lo_idx, m), branches


def _survivor_counts(first_index: np.ndarray, m: int) -> np.ndarray:
    """counts[k] = #{replicas with tau > t_k}; first_index is the first node with t_k >= tau."""
    hist = np.bincount(first_index, minlength=m + 1)
    return hist.sum() - np.cumsum(hist)[:m]


def _simulate(
    spec: DiscreteModelSpec,
    trunc: TruncationConfig,
    grid: TimeGrid,
    replicas: int,
    seed: int,
    *,
    rooted: bool,
    target: str,
    settings: Optional[Settings],
) -> SimulationResult:
    if replicas < 1:
        raise PreconditionError(f"replicas must be >= 1, got {replicas!r}")
    if not 0 <= seed < SEED_LIMIT:
        raise PreconditionError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    settings = settings or load_settings()
    payload = _block_payload(spec)
    nodes = grid.nodes
    blocks = [(start, min(start + settings.block_size, replicas)) for start in range(0, replicas, settings.block_size)]
    workers = min(settings.threads, len(blocks))
    logger.info(
        "Simulation started | target=%s replicas=%s depth=%s blocks=%s workers=%s seed=%s",
        target, replicas, trunc.depth, len(blocks), workers, seed,
    )

    jobs = [(payload, trunc.depth, nodes, seed, start, stop, rooted) for start, stop in blocks]
    bar = tqdm(total=len(blocks), desc=f"simulate {target}", unit="block", disable=not settings.progress)
    hi = np.zeros(grid.m, dtype=np.int64)
    lo = np.zeros(grid.m, dtype=np.int64)
    branches = np.zeros(spec.n + 1, dtype=np.int64)
    try:
        if workers <= 1:
            outputs = (_run_block(*job) for job in jobs)
            for block_hi, block_lo, block_branches in outputs:
                hi += block_hi
                lo += block_lo
                branches += block_branches
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                for block_hi, block_lo, block_branches in executor.map(_run_block, *zip(*jobs)):
                    hi += block_hi
                    lo += block_lo
                    branches += block_branches
                    bar.update(1)
    finally:
        bar.close()

    survival_hi = hi / replicas
    survival_lo = lo / replicas
    mid = 0.5 * (survival_hi + survival_lo)
    stderr = np.sqrt(mid * (1.0 - mid) / replicas)
    result = SimulationResult(
        grid=grid,
        survival_lo=survival_lo,
        survival_hi=survival_hi,
        stderr=stderr,
        replicas=replicas,
        seed=seed,
        depth=trunc.depth,
        target=target,
        branch_counts=branches if not rooted else branches[: spec.n],
    )
    logger.info("Simulation finished | target=%s bracket_width=%.3g", target, result.bracket_width)
    return result


def simulate_time_to_infection(
    spec: DiscreteModelSpec,
    trunc: TruncationConfig,
    grid: TimeGrid,
    replicas: int,
    seed: int,
    *,
    settings: Optional[Settings] = None,
) -> SimulationResult:
    return _simulate(spec, trunc, grid, replicas, seed, rooted=False, target="time-to-infection", settings=settings)


def estimate_expected_susceptible(
    spec: DiscreteModelSpec,
    trunc: TruncationConfig,
    grid: TimeGrid,
    replicas: int,
    seed: int,
    *,
    settings: Optional[Settings] = None,
) -> SimulationResult:
    """S_{t,n}: the center vertex under the per-edge rate eps / (n + 1)."""
    return _simulate(
        spec.scaled(), trunc, grid, replicas, seed, rooted=False, target="expected-susceptible", settings=settings
    )


def simulate_root(
    spec: DiscreteModelSpec,
    trunc: TruncationConfig,
    grid: TimeGrid,
    replicas: int,
    seed: int,
    *,
    settings: Optional[Settings] = None,
) -> SimulationResult:
    """Infection time of the root of a rooted subtree (n children)."""
    return _simulate(spec, trunc, grid, replicas, seed, rooted=True, target="root", settings=settings)


# --- diagnostics ---------------------------------------------------------------------


def compare_to_curve(result: SimulationResult, curve: np.ndarray, *, threshold: float = Z_THRESHOLD) -> CurveComparison:
    """Signed z-scores of a reference curve outside the simulated bracket.

    Inside [lo, hi] the score is 0. The standard error is floored at
    1/replicas so that nodes with an empirical probability of 0 or 1 do not
    divide by zero.
    """
    curve = np.asarray(curve, dtype=float)
    if curve.shape != result.survival_hi.shape:
        raise DomainError(f"curve has shape {curve.shape}, expected {result.survival_hi.shape}")
    se = np.maximum(result.stderr, 1.0 / result.replicas)
    above = np.maximum(curve - result.survival_hi, 0.0)
    below = np.maximum(result.survival_lo - curve, 0.0)
    z = (above - below) / se
    z_max = float(np.max(np.abs(z))) if z.size else 0.0
    return CurveComparison(
        z=z,
        z_max=z_max,
        max_abs_diff=ks_distance(result, curve),
        bracket_width=result.bracket_width,
        passed=z_max <= threshold,
    )


def ks_distance(result: SimulationResult, curve: np.ndarray) -> float:
    """Max-norm distance between the bracket midpoint and a reference survival curve."""
    return float(np.max(np.abs(result.survival_mid - np.asarray(curve, dtype=float))))


def exchangeability_pvalue(result: SimulationResult) -> float:
    """Chi-square p-value for 'every branch delivers the infection equally often'."""
    counts = np.asarray(result.branch_counts)
    if counts.size < 2 or counts.sum() == 0:
        return 1.0
    return float(stats.chisquare(counts).pvalue)


@dataclass(frozen=True, slots=True)
class RecursionReport:
    result: SimulationResult
    curve: np.ndarray
    comparison: CurveComparison

    @property
    def passed(self) -> bool:
        return self.comparison.passed


def recursion_check(
    spec: DiscreteModelSpec,
    trunc: TruncationConfig,
    grid: TimeGrid,
    replicas: int,
    seed: int,
    *,
    settings: Optional[Settings] = None,
) -> RecursionReport:
    """Empirical tail of the root's infection time against (1 - p) f_t s_t^n."""
    result = simulate_root(spec, trunc, grid, replicas, seed, settings=settings)
    curve = reference_values(root_tail_curve, spec, grid, "root_tail")
    comparison = compare_to_curve(result, curve)
    logger.info("Recursion check | z_max=%.3f passed=%s", comparison.z_max, comparison.passed)
    return RecursionReport(result, curve, comparison)
