"""CSV trajectories and JSON reports.

Both carry the tool version and the fully resolved scenario so that an
artifact alone says how it was produced. Output depends only on its inputs:
no timestamps, no host data.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd

from . import __version__
from .grid import TimeGrid, Trajectory

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _header_lines(parameters: Mapping[str, Any]) -> list[str]:
    return [
        f"# treesir {__version__}",
        f"# scenario {json.dumps(parameters, separators=(',', ':'))}",
    ]


def trajectory_frame(trajectory: Trajectory) -> pd.DataFrame:
    """Trajectory as a frame whose ``t`` column is fixed-point text at the grid resolution."""
    frame = trajectory.to_frame()
    frame["t"] = format_times(trajectory.grid)
    return frame


def format_times(grid: TimeGrid) -> list[str]:
    decimals = grid.decimals
    return [f"{t:.{decimals}f}" for t in grid.nodes]


def write_csv(path: Path, frame: pd.DataFrame, parameters: Mapping[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(_header_lines(parameters)) + "\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Artifact written | kind=csv path=%s rows=%s", path, len(frame))
    return path


def write_trajectory_csv(path: Path, trajectory: Trajectory, parameters: Mapping[str, Any]) -> Path:
    return write_csv(path, trajectory_frame(trajectory), parameters)


def _plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def build_report(
    name: str,
    mode: str,
    metrics: Mapping[str, Any],
    passed: bool,
    parameters: Mapping[str, Any],
) -> dict[str, Any]:
    base = {"max_abs_diff": None, "z_max": None, "bracket_width": None, "orders": []}
    base.update(metrics)
    report = {
        "scenario": name,
        "mode": mode,
        "metrics": _plain(base),
        "pass": bool(passed),
        "version": __version__,
        "parameters": _plain(parameters),
    }
    return report


def write_report(path: Path, report: Mapping[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    logger.info("Artifact written | kind=report path=%s pass=%s", path, report.get("pass"))
    return path
