"""Scenario files: parsing, validation and canonical serialization.

A scenario is one JSON object; see docs/scenario-schema.md. Every problem is
reported as a ScenarioError naming the field and, when the key can be found
in the source text, its line.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Tuple

from .continuum import ContinuousModelSpec
from .discrete_solver import DiscreteModelSpec
from .errors import ScenarioError, TreeSIRError
from .grid import TimeGrid
from .kernelform import kernel_of
from .ratekit import RateFunction, RecoveryDistribution, derivative_kinks, gamma_total
from .tree_simulator import SEED_LIMIT, TruncationConfig

logger = logging.getLogger(__name__)

MODES = ("discrete-solve", "simulate", "master-solve", "kernel-solve", "converge", "stationary", "compare")
DISCRETE_ORACLES = ("closed-form", "bernoulli-ode", "dde", "exponential-ode", "effective-rate")
CONTINUUM_ORACLES = ("classic-sir", "classic-master", "kernel", "latent", "deterministic-recovery")
SIMULATION_TARGETS = ("time-to-infection", "expected-susceptible", "root")

_TOP_KEYS = {
    "name", "mode", "model", "grid", "simulation", "oracle", "tolerance",
    "n_list", "convergence_target", "history", "initial_cohort_recovers", "output",
}
_MODEL_KEYS = {"n", "p", "eps", "lambda", "recovery", "S0"}
_GRID_KEYS = {"T", "h"}
_SIMULATION_KEYS = {"replicas", "seed", "depth", "boundary", "target"}
_OUTPUT_KEYS = {"csv", "report"}
_RATE_KEYS = {
    "constant": {"kind", "value"},
    "piecewise": {"kind", "breakpoints", "values"},
    "latent-window": {"kind", "level", "latency"},
    "tabulated": {"kind", "grid", "values"},
}
_RECOVERY_KEYS = {
    "deterministic": {"kind", "H"},
    "exponential": {"kind", "mu"},
    "never": {"kind"},
    "tabulated-tail": {"kind", "grid", "tail"},
}

_NEEDS_DISCRETE = {"discrete-solve", "simulate", "compare", "converge"}
_NEEDS_CONTINUOUS = {"master-solve", "kernel-solve", "stationary"}
_NEEDS_GRID = {"discrete-solve", "simulate", "compare", "master-solve", "kernel-solve", "converge"}

DEFAULT_DEPTH = 12
DEFAULT_TOLERANCE = {
    "discrete-solve": 1e-6,
    "master-solve": 1e-6,
    "kernel-solve": 1e-6,
    "stationary": 1e-4,
}


@dataclass(frozen=True, slots=True)
class SimulationBlock:
    replicas: int
    seed: Optional[int]
    truncation: TruncationConfig
    target: str = "time-to-infection"


@dataclass(frozen=True, slots=True)
class Scenario:
    name: str
    mode: str
    canonical: dict[str, Any]
    p: float = 0.0
    grid: Optional[TimeGrid] = None
    discrete: Optional[DiscreteModelSpec] = None
    continuous: Optional[ContinuousModelSpec] = None
    simulation: Optional[SimulationBlock] = None
    oracle: Optional[str] = None
    tolerance: Optional[float] = None
    n_list: Tuple[int, ...] = ()
    convergence_target: str = "master"
    history: str = "latent"
    initial_cohort_recovers: bool = True
    outputs: dict[str, str] = field(default_factory=dict)


# --- raw access --------------------------------------------------------------------


def _coerce_int(value: Any) -> Optional[int]:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        value = value.strip()
        try:
            return int(value)
        except ValueError:
            return None
    return None


def _coerce_float(value: Any) -> Optional[float]:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return None
    value = float(value)
    return value if math.isfinite(value) else None


class _Collector:
    """Accumulates diagnostics; line numbers come from the first quoted occurrence of a key."""

    def __init__(self, text: str) -> None:
        self._lines = text.splitlines()
        self.issues: list[ScenarioError] = []

    def line_of(self, path: str) -> Optional[int]:
        key = path.split(".")[-1]
        key = re.sub(r"\[\d+\]$", "", key)
        needle = f'"{key}"'
        for number, line in enumerate(self._lines, start=1):
            if needle in line:
                return number
        return None

    def add(self, message: str, path: str) -> None:
        self.issues.append(ScenarioError(message, field=path, line=self.line_of(path)))

    def attempt(self, path: str, build: Callable[[], Any]) -> Any:
        try:
            return build()
        except TreeSIRError as exc:
            self.add(str(exc), path)
        except (KeyError, TypeError, ValueError) as exc:
            self.add(f"invalid value ({exc})", path)
        return None


def _check_keys(block: Any, allowed: set[str], path: str, issues: _Collector) -> dict[str, Any]:
    if not isinstance(block, dict):
        issues.add(f"expected an object, got {type(block).__name__}", path)
        return {}
    for key in block:
        if key not in allowed:
            issues.add(f"unknown key '{key}'", f"{path}.{key}" if path else key)
    return block


def _rate(raw: Any, path: str, issues: _Collector) -> Optional[RateFunction]:
    if not isinstance(raw, dict):
        issues.add("rate must be an object with a 'kind'", path)
        return None
    kind = raw.get("kind")
    if kind not in _RATE_KEYS:
        issues.add(f"unknown rate kind {kind!r}; expected one of {sorted(_RATE_KEYS)}", f"{path}.kind")
        return None
    _check_keys(raw, _RATE_KEYS[kind], path, issues)
    missing = sorted(_RATE_KEYS[kind] - set(raw))
    if missing:
        issues.add(f"{kind} rate is missing {missing}", path)
        return None
    return issues.attempt(path, lambda: RateFunction.from_dict(raw))


def _recovery(raw: Any, path: str, issues: _Collector) -> Optional[RecoveryDistribution]:
    if not isinstance(raw, dict):
        issues.add("recovery must be an object with a 'kind'", path)
        return None
    kind = raw.get("kind")
    if kind not in _RECOVERY_KEYS:
        issues.add(f"unknown recovery kind {kind!r}; expected one of {sorted(_RECOVERY_KEYS)}", f"{path}.kind")
        return None
    _check_keys(raw, _RECOVERY_KEYS[kind], path, issues)
    missing = sorted(_RECOVERY_KEYS[kind] - set(raw))
    if missing:
        issues.add(f"{kind} recovery is missing {missing}", path)
        return None
    return issues.attempt(path, lambda: RecoveryDistribution.from_dict(raw))


# --- validation --------------------------------------------------------------------


def check_scenario(text: str) -> tuple[Optional[Scenario], list[ScenarioError]]:
    """Parse and validate without running anything; returns the scenario and all diagnostics."""
    issues = _Collector(text)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, [ScenarioError(f"invalid JSON: {exc.msg}", line=exc.lineno)]
    top = _check_keys(raw, _TOP_KEYS, "", issues)
    if not top:
        return None, issues.issues or [ScenarioError("scenario is empty")]

    mode = top.get("mode")
    if mode not in MODES:
        issues.add(f"mode must be one of {list(MODES)}, got {mode!r}", "mode")
        return None, issues.issues
    name = top.get("name", "scenario")
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        issues.add("name must be a non-empty string of letters, digits, '.', '_' or '-'", "name")
        name = "scenario"

    model = _check_keys(top.get("model", {}), _MODEL_KEYS, "model", issues)
    grid_raw = _check_keys(top.get("grid", {}), _GRID_KEYS, "grid", issues) if "grid" in top else {}
    grid = None
    if grid_raw:
        T, h = _coerce_float(grid_raw.get("T")), _coerce_float(grid_raw.get("h"))
        if T is None or h is None:
            issues.add("grid needs numeric 'T' and 'h'", "grid")
        else:
            grid = issues.attempt("grid.h", lambda: TimeGrid(T, h))
    elif mode in _NEEDS_GRID:
        issues.add(f"mode '{mode}' needs a grid", "grid")

    eps = _rate(model["eps"], "model.eps", issues) if "eps" in model else None
    if "eps" not in model:
        issues.add("model.eps is required", "model")
    lam = _rate(model.get("lambda", {"kind": "constant", "value": 0.0}), "model.lambda", issues)
    recovery = _recovery(model.get("recovery", {"kind": "never"}), "model.recovery", issues)
    p = _coerce_float(model.get("p", 0.0))
    if p is None:
        issues.add("p must be a number", "model.p")
    elif mode in _NEEDS_DISCRETE and not 0.0 <= p < 1.0:
        issues.add(
            f"p must satisfy 0 <= p < 1 because the time-to-infection law conditions on the vertex "
            f"starting susceptible, got p={p!r}",
            "model.p",
        )
        p = None
    ready = None not in (eps, lam, recovery, p)

    discrete = continuous = None
    if mode in _NEEDS_DISCRETE - {"converge"}:
        n = _coerce_int(model.get("n"))
        if n is None or n < 1:
            issues.add("model.n must be an integer >= 1 (vertex degree n + 1)", "model.n")
        elif ready:
            discrete = issues.attempt("model.n", lambda: DiscreteModelSpec(n, p, eps, lam, recovery))
    if mode in _NEEDS_CONTINUOUS:
        S0 = _coerce_float(model.get("S0"))
        if S0 is None:
            issues.add("model.S0 is required for the continuum modes", "model.S0")
        elif ready:
            continuous = issues.attempt("model.S0", lambda: ContinuousModelSpec(eps, recovery, lam, S0))
    if mode == "converge":
        if "S0" in model:
            issues.add("converge mode takes S0 = 1 - p; drop model.S0", "model.S0")
        elif ready:
            continuous = issues.attempt("model.p", lambda: ContinuousModelSpec(eps, recovery, lam, 1.0 - p))

    if grid is not None and eps is not None and recovery is not None:
        issues.attempt("grid.h", lambda: grid.require_aligned(derivative_kinks(eps, recovery), what="kink of phi'"))

    simulation = None
    if mode in ("simulate", "compare"):
        simulation = _simulation_block(top.get("simulation"), issues)

    oracle = top.get("oracle")
    if oracle is not None:
        allowed = DISCRETE_ORACLES if mode == "discrete-solve" else CONTINUUM_ORACLES if mode == "master-solve" else ()
        if oracle not in allowed:
            issues.add(f"oracle {oracle!r} is not available in mode '{mode}'; expected one of {list(allowed)}", "oracle")
            oracle = None

    tolerance = top.get("tolerance", DEFAULT_TOLERANCE.get(mode))
    if tolerance is not None and not (_coerce_float(tolerance) or 0.0) > 0:
        issues.add("tolerance must be a positive number", "tolerance")

    n_list: tuple[int, ...] = ()
    if mode == "converge":
        raw_list = top.get("n_list")
        values = [_coerce_int(v) for v in raw_list] if isinstance(raw_list, list) else []
        if not values or any(v is None or v < 1 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
            issues.add("n_list must be a strictly increasing list of integers >= 1", "n_list")
        else:
            n_list = tuple(values)
    target = top.get("convergence_target", "master")
    if target not in ("master", "logistic"):
        issues.add("convergence_target must be 'master' or 'logistic'", "convergence_target")
    history = top.get("history", "latent")
    if history not in ("latent", "exposed"):
        issues.add("history must be 'latent' or 'exposed'", "history")
    cohort = top.get("initial_cohort_recovers", True)
    if not isinstance(cohort, bool):
        issues.add("initial_cohort_recovers must be true or false", "initial_cohort_recovers")

    outputs_raw = _check_keys(top.get("output", {}), _OUTPUT_KEYS, "output", issues)
    outputs = {"csv": f"{name}.csv", "report": f"{name}.json"}
    for key in _OUTPUT_KEYS:
        if key in outputs_raw:
            if isinstance(outputs_raw[key], str) and outputs_raw[key].strip():
                outputs[key] = outputs_raw[key].strip()
            else:
                issues.add(f"output.{key} must be a non-empty path", f"output.{key}")

    _check_oracle_preconditions(oracle, eps, lam, recovery, p, grid, issues)
    if mode == "kernel-solve" or oracle == "kernel":
        _check_kernel_catalog(eps, recovery, issues)
    if mode == "stationary" and None not in (eps, lam, recovery):
        _check_stationary(eps, lam, recovery, issues)
    if mode == "converge" and target == "logistic" and eps is not None and lam is not None:
        if eps.constant_value is None or lam.constant_value is None:
            issues.add("the logistic limit needs constant eps (as c) and constant lambda", "model.eps")

    if issues.issues:
        return None, issues.issues

    scenario = Scenario(
        name=name,
        mode=mode,
        canonical={},
        p=p,
        grid=grid,
        discrete=discrete,
        continuous=continuous,
        simulation=simulation,
        oracle=oracle,
        tolerance=float(tolerance) if tolerance is not None else None,
        n_list=n_list,
        convergence_target=target,
        history=history,
        initial_cohort_recovers=cohort,
        outputs=outputs,
    )
    return replace(scenario, canonical=_canonical(scenario, eps, lam, recovery)), []


def _simulation_block(raw: Any, issues: _Collector) -> Optional[SimulationBlock]:
    if raw is None:
        issues.add("simulate and compare modes need a simulation block", "simulation")
        return None
    block = _check_keys(raw, _SIMULATION_KEYS, "simulation", issues)
    replicas = _coerce_int(block.get("replicas"))
    if replicas is None or replicas < 1:
        issues.add("simulation.replicas must be an integer >= 1", "simulation.replicas")
    seed = block.get("seed")
    if seed is not None:
        seed = _coerce_int(seed)
        if seed is None or not 0 <= seed < SEED_LIMIT:
            issues.add("simulation.seed must be an unsigned 64-bit integer", "simulation.seed")
    depth = _coerce_int(block.get("depth", DEFAULT_DEPTH))
    boundary = block.get("boundary", "optimistic")
    truncation = issues.attempt("simulation.depth", lambda: TruncationConfig(depth, boundary))
    target = block.get("target", "time-to-infection")
    if target not in SIMULATION_TARGETS:
        issues.add(f"simulation.target must be one of {list(SIMULATION_TARGETS)}", "simulation.target")
    if replicas is None or replicas < 1 or truncation is None or target not in SIMULATION_TARGETS:
        return None
    return SimulationBlock(replicas, seed, truncation, target)


def _check_oracle_preconditions(
    oracle: Optional[str],
    eps: Optional[RateFunction],
    lam: Optional[RateFunction],
    recovery: Optional[RecoveryDistribution],
    p: Optional[float],
    grid: Optional[TimeGrid],
    issues: _Collector,
) -> None:
    if oracle is None or eps is None or lam is None or recovery is None:
        return
    constant_eps = eps.constant_value is not None
    if oracle in ("closed-form", "bernoulli-ode", "dde", "exponential-ode"):
        if not constant_eps or lam.constant_value is None:
            issues.add(f"oracle '{oracle}' needs constant eps and lambda", "model.eps")
        if p is not None and p not in (0, 0.0):
            issues.add(f"oracle '{oracle}' is stated for p = 0", "model.p")
        if oracle == "closed-form" and not (eps.values[0] > 0 and lam.values[0] > 0):
            issues.add("oracle 'closed-form' needs eps > 0 and lambda > 0", "model.lambda")
    expected_recovery = {
        "closed-form": "never",
        "bernoulli-ode": "never",
        "dde": "deterministic",
        "exponential-ode": "exponential",
        "classic-sir": "exponential",
        "classic-master": "exponential",
        "latent": "never",
        "deterministic-recovery": "deterministic",
    }.get(oracle)
    if expected_recovery is not None and recovery.kind != expected_recovery:
        issues.add(f"oracle '{oracle}' needs {expected_recovery} recovery, got {recovery.kind}", "model.recovery")
    if oracle in ("classic-sir", "classic-master", "latent", "deterministic-recovery") and not lam.is_zero:
        issues.add(f"oracle '{oracle}' has no self-infection term; set lambda to 0", "model.lambda")
    if oracle in ("classic-sir", "classic-master", "deterministic-recovery") and not constant_eps:
        issues.add(f"oracle '{oracle}' needs a constant eps", "model.eps")
    if oracle == "classic-master" and not eps.values[0] > 0:
        issues.add("oracle 'classic-master' needs eps > 0", "model.eps")
    if oracle == "latent" and eps.kind not in ("latent-window", "constant"):
        issues.add("oracle 'latent' needs a latent-window eps", "model.eps")
    if grid is not None and oracle in ("dde", "deterministic-recovery") and recovery.kind == "deterministic":
        if recovery.duration <= grid.horizon:
            issues.attempt("grid.h", lambda: grid.index_of(recovery.duration, what="H"))
    if grid is not None and oracle == "latent" and 0 < eps.latency <= grid.horizon:
        issues.attempt("grid.h", lambda: grid.index_of(eps.latency, what="L"))


def _check_kernel_catalog(
    eps: Optional[RateFunction], recovery: Optional[RecoveryDistribution], issues: _Collector
) -> None:
    if eps is None or recovery is None:
        return
    issues.attempt("model.eps", lambda: kernel_of("gamma", recovery, eps))
    issues.attempt("model.recovery", lambda: kernel_of("recovery-flux", recovery))


def _check_stationary(
    eps: RateFunction, lam: RateFunction, recovery: RecoveryDistribution, issues: _Collector
) -> None:
    total = issues.attempt("model.recovery", lambda: gamma_total(eps, recovery))
    if total is not None and not math.isfinite(total):
        issues.add("stationary mode needs a finite integral of gamma (recovery or a vanishing eps)", "model.recovery")
    if not math.isfinite(lam.total()):
        issues.add("stationary mode needs a finite integral of lambda", "model.lambda")


# --- canonical form ------------------------------------------------------------------


def _canonical(
    scenario: Scenario,
    eps: RateFunction,
    lam: RateFunction,
    recovery: RecoveryDistribution,
) -> dict[str, Any]:
    canonical_model: dict[str, Any] = {}
    if scenario.discrete is not None:
        canonical_model["n"] = scenario.discrete.n
    canonical_model["p"] = scenario.p
    canonical_model["eps"] = eps.to_dict()
    canonical_model["lambda"] = lam.to_dict()
    canonical_model["recovery"] = recovery.to_dict()
    if scenario.mode in _NEEDS_CONTINUOUS and scenario.continuous is not None:
        canonical_model["S0"] = scenario.continuous.S0

    out: dict[str, Any] = {"name": scenario.name, "mode": scenario.mode, "model": canonical_model}
    if scenario.grid is not None:
        out["grid"] = {"T": scenario.grid.horizon, "h": scenario.grid.step}
    if scenario.simulation is not None:
        sim = scenario.simulation
        out["simulation"] = {
            "replicas": sim.replicas,
            "seed": sim.seed,
            "depth": sim.truncation.depth,
            "boundary": sim.truncation.boundary,
            "target": sim.target,
        }
    if scenario.oracle is not None:
        out["oracle"] = scenario.oracle
    if scenario.tolerance is not None:
        out["tolerance"] = scenario.tolerance
    if scenario.mode == "converge":
        out["n_list"] = list(scenario.n_list)
        out["convergence_target"] = scenario.convergence_target
    if scenario.oracle == "latent":
        out["history"] = scenario.history
    if scenario.oracle == "deterministic-recovery":
        out["initial_cohort_recovers"] = scenario.initial_cohort_recovers
    out["output"] = dict(sorted(scenario.outputs.items()))
    return out


def serialize(scenario: Scenario) -> str:
    """Canonical JSON text; parsing it again yields the same scenario."""
    return json.dumps(scenario.canonical, indent=2) + "\n"


def parse(text: str) -> Scenario:
    scenario, issues = check_scenario(text)
    if issues:
        raise issues[0]
    assert scenario is not None
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    scenario = parse(text)
    logger.info("Scenario loaded | name=%s mode=%s path=%s", scenario.name, scenario.mode, path)
    return scenario


def validate(path: str | Path) -> list[ScenarioError]:
    """Full schema and precondition diagnostics, no solver runs; empty when valid."""
    return check_scenario(Path(path).read_text(encoding="utf-8"))[1]
