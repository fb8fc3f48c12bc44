"""Mode dispatch: one scenario in, one CSV and one JSON report out."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import pandas as pd

from .artifacts import build_report, write_csv, write_report, write_trajectory_csv
from .config import Settings
from .continuum import (
    check_conservation,
    classic_master_form,
    classic_sir_oracle,
    compartments,
    deterministic_recovery_continuum_solve,
    finite_n_convergence,
    latent_model_solve,
    solve_master,
    stationary_state,
)
from .discrete_solver import (
    DiscreteModelSpec,
    bernoulli_ode_solve,
    closed_form_no_recovery,
    deterministic_recovery_dde_solve,
    effective_two_state_solve,
    expected_susceptible_curve,
    exponential_recovery_ode_solve,
    observed_order,
    reference_values,
    root_tail_curve,
    survival_curve,
)
from .errors import TreeSIRError
from .grid import TimeGrid, Trajectory, max_abs_diff
from .kernelform import solve_kernel_system
from .scenario import Scenario
from .tree_simulator import (
    compare_to_curve,
    estimate_expected_susceptible,
    exchangeability_pvalue,
    simulate_root,
    simulate_time_to_infection,
)

logger = logging.getLogger(__name__)

STATIONARY_RESIDUAL_TOL = 1e-10


@dataclass(slots=True)
class RunOutcome:
    scenario: Scenario
    report: dict[str, Any]
    artifacts: list[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.report["pass"])


@dataclass(slots=True)
class _Context:
    scenario: Scenario
    settings: Settings
    seed: int
    parameters: dict[str, Any]


@dataclass(slots=True)
class _ModeResult:
    metrics: dict[str, Any]
    passed: bool
    trajectory: Optional[Trajectory] = None
    table: Optional[pd.DataFrame] = None


# --- discrete ----------------------------------------------------------------------


def _discrete_oracle(name: str, spec: DiscreteModelSpec, grid: TimeGrid) -> Trajectory:
    eps, lam = spec.eps.constant_value, spec.lam.constant_value
    if name == "closed-form":
        return closed_form_no_recovery(spec.n, eps, lam, grid)
    if name == "bernoulli-ode":
        return bernoulli_ode_solve(spec.n, eps, lam, grid)
    if name == "dde":
        return deterministic_recovery_dde_solve(spec.n, eps, lam, spec.recovery.duration, grid)
    if name == "exponential-ode":
        return exponential_recovery_ode_solve(spec.n, eps, lam, spec.recovery.mu, grid)
    return effective_two_state_solve(spec, grid)


def _oracle_gap(solved: Trajectory, oracle: Trajectory) -> float:
    shared = [name for name in oracle.names if name in solved]
    return max(max_abs_diff(solved[name], oracle[name]) for name in shared)


def _orders(
    solve: Callable[[TimeGrid], Trajectory], oracle: Callable[[TimeGrid], Trajectory], grid: TimeGrid, fine_error: float
) -> list[float]:
    """log2(err(2h) / err(h)) when the coarsened grid is admissible."""
    try:
        coarse = grid.coarsened()
        coarse_error = _oracle_gap(solve(coarse), oracle(coarse))
    except TreeSIRError as exc:
        logger.info("Order estimate skipped | reason=%s", exc)
        return []
    return [observed_order(coarse_error, fine_error)]


def _run_discrete_solve(ctx: _Context) -> _ModeResult:
    scenario = ctx.scenario
    spec, grid = scenario.discrete, scenario.grid
    solved = survival_curve(spec, grid)
    metrics: dict[str, Any] = {"clamped": solved.meta["clamped"]}
    passed = solved.meta["clamped"] == 0
    if scenario.oracle is not None:
        oracle = _discrete_oracle(scenario.oracle, spec, grid)
        gap = _oracle_gap(solved, oracle)
        metrics["max_abs_diff"] = gap
        metrics["orders"] = _orders(
            lambda g: survival_curve(spec, g), lambda g: _discrete_oracle(scenario.oracle, spec, g), grid, gap
        )
        passed = passed and gap <= scenario.tolerance
        solved = solved.with_series(**{f"oracle_{name}": oracle[name] for name in oracle.names})
    return _ModeResult(metrics, passed, trajectory=solved)


# --- simulation ----------------------------------------------------------------------

_SIMULATORS = {
    "time-to-infection": (simulate_time_to_infection, survival_curve, "survival"),
    "expected-susceptible": (estimate_expected_susceptible, expected_susceptible_curve, "survival"),
    "root": (simulate_root, root_tail_curve, "root_tail"),
}


def _run_simulation(ctx: _Context, *, compare: bool) -> _ModeResult:
    scenario = ctx.scenario
    block = scenario.simulation
    simulate, curve_of, series = _SIMULATORS[block.target]
    result = simulate(scenario.discrete, block.truncation, scenario.grid, block.replicas, ctx.seed, settings=ctx.settings)
    trajectory = result.to_trajectory().with_series(survival=result.survival(block.truncation.boundary))
    metrics: dict[str, Any] = {
        "bracket_width": result.bracket_width,
        "exchangeability_pvalue": exchangeability_pvalue(result),
        "replicas": result.replicas,
    }
    passed = True
    if compare:
        curve = reference_values(curve_of, scenario.discrete, scenario.grid, series)
        comparison = compare_to_curve(result, curve)
        metrics.update(z_max=comparison.z_max, max_abs_diff=comparison.max_abs_diff)
        passed = comparison.passed
        trajectory = trajectory.with_series(solver=curve, z=comparison.z)
    return _ModeResult(metrics, passed, trajectory=trajectory)


# --- continuum -----------------------------------------------------------------------


def _continuum_oracle(ctx: _Context, grid: TimeGrid) -> Trajectory:
    scenario = ctx.scenario
    spec = scenario.continuous
    name = scenario.oracle
    eps = spec.eps.constant_value
    if name == "classic-sir":
        return classic_sir_oracle(eps, spec.recovery.mu, spec.S0, spec.I0, grid)
    if name == "classic-master":
        return classic_master_form(spec.S0, eps, spec.recovery.mu, grid)
    if name == "kernel":
        return solve_kernel_system(spec, grid)
    if name == "latent":
        return latent_model_solve(spec.eps.values[-1], spec.eps.latency, spec.S0, grid, history=scenario.history)
    return deterministic_recovery_continuum_solve(
        eps, spec.recovery.duration, spec.S0, grid, initial_cohort_recovers=scenario.initial_cohort_recovers
    )


def _run_master_solve(ctx: _Context) -> _ModeResult:
    scenario = ctx.scenario
    spec, grid = scenario.continuous, scenario.grid
    solved = compartments(spec, grid)
    metrics: dict[str, Any] = {"conservation": check_conservation(solved), "S_T": float(solved["S"][-1])}
    passed = True
    if scenario.oracle is not None:
        oracle = _continuum_oracle(ctx, grid)
        gap = _oracle_gap(solved, oracle)
        metrics["max_abs_diff"] = gap
        metrics["orders"] = _orders(
            lambda g: compartments(spec, g), lambda g: _continuum_oracle(ctx, g), grid, gap
        )
        passed = gap <= scenario.tolerance
        solved = solved.with_series(**{f"oracle_{name}": oracle[name] for name in oracle.names})
    return _ModeResult(metrics, passed, trajectory=solved)


def _run_kernel_solve(ctx: _Context) -> _ModeResult:
    scenario = ctx.scenario
    kernel = solve_kernel_system(scenario.continuous, scenario.grid)
    reference = compartments(scenario.continuous, scenario.grid)
    gap = _oracle_gap(kernel, reference)
    metrics = {"max_abs_diff": gap, "conservation": check_conservation(kernel)}
    trajectory = kernel.with_series(**{f"master_{name}": reference[name] for name in ("S", "I", "R")})
    return _ModeResult(metrics, gap <= scenario.tolerance, trajectory=trajectory)


def _run_converge(ctx: _Context) -> _ModeResult:
    scenario = ctx.scenario
    spec = scenario.continuous
    report = finite_n_convergence(
        spec.eps, spec.lam, spec.recovery, scenario.p, scenario.grid, scenario.n_list,
        target=scenario.convergence_target,
    )
    table = pd.DataFrame({"n": list(report.n_list), "distance": list(report.distances)})
    metrics = {"distances": list(report.distances), "max_abs_diff": report.distances[-1]}
    return _ModeResult(metrics, report.decreasing, table=table)


def _run_stationary(ctx: _Context) -> _ModeResult:
    scenario = ctx.scenario
    report = stationary_state(scenario.continuous)
    metrics: dict[str, Any] = {
        "S_inf": report.S_inf,
        "residual": report.residual,
        "iterations": report.iterations,
        "interior": report.interior,
        "bracket": list(report.bracket),
    }
    passed = report.residual <= STATIONARY_RESIDUAL_TOL
    trajectory = None
    if scenario.grid is not None:
        trajectory = solve_master(scenario.continuous, scenario.grid)
        gap = abs(float(trajectory["S"][-1]) - report.S_inf)
        metrics["max_abs_diff"] = gap
        passed = passed and gap <= scenario.tolerance
    return _ModeResult(metrics, passed, trajectory=trajectory)


_HANDLERS: dict[str, Callable[[_Context], _ModeResult]] = {
    "discrete-solve": _run_discrete_solve,
    "simulate": lambda ctx: _run_simulation(ctx, compare=False),
    "compare": lambda ctx: _run_simulation(ctx, compare=True),
    "master-solve": _run_master_solve,
    "kernel-solve": _run_kernel_solve,
    "converge": _run_converge,
    "stationary": _run_stationary,
}


def resolve_seed(scenario: Scenario, settings: Settings, seed: Optional[int] = None) -> int:
    """Flag, then scenario, then environment."""
    if seed is not None:
        return seed
    if scenario.simulation is not None and scenario.simulation.seed is not None:
        return scenario.simulation.seed
    return settings.seed


def run_scenario(scenario: Scenario, settings: Settings, *, seed: Optional[int] = None) -> RunOutcome:
    resolved_seed = resolve_seed(scenario, settings, seed)
    parameters = copy.deepcopy(scenario.canonical)
    if "simulation" in parameters:
        parameters["simulation"]["seed"] = resolved_seed
    ctx = _Context(scenario, settings, resolved_seed, parameters)

    logger.info("Run started | scenario=%s mode=%s", scenario.name, scenario.mode)
    result = _HANDLERS[scenario.mode](ctx)

    artifacts: list[Path] = []
    csv_path = settings.out_dir / scenario.outputs["csv"]
    if result.trajectory is not None:
        artifacts.append(write_trajectory_csv(csv_path, result.trajectory, parameters))
    elif result.table is not None:
        artifacts.append(write_csv(csv_path, result.table, parameters))
    report = build_report(scenario.name, scenario.mode, result.metrics, result.passed, parameters)
    artifacts.append(write_report(settings.out_dir / scenario.outputs["report"], report))
    logger.info("Run finished | scenario=%s pass=%s", scenario.name, report["pass"])
    return RunOutcome(scenario, report, artifacts)
