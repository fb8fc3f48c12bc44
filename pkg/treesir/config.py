from dataclasses import dataclass
from pathlib import Path
from typing import Optional
import os

LOG_LEVELS = frozenset({"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"})


@dataclass(slots=True)
class Settings:
    threads: int
    out_dir: Path
    log_level: str = "INFO"
    progress: bool = True
    block_size: int = 1000
    seed: int = 0


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in {"1", "true", "yes", "on"}


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    return int(raw) if raw.isdigit() else default


def _env_log_level(name: str, default: str) -> str:
    raw = os.getenv(name, default).strip().upper()
    return raw if raw in LOG_LEVELS else default


def load_settings(
    *,
    threads: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> Settings:
    default_threads = _env_int("TREESIR_THREADS", os.cpu_count() or 1)
    resolved_out = out_dir if out_dir is not None else os.getenv("TREESIR_OUT_DIR", ".")

    return Settings(
        threads=max(1, threads if threads is not None else default_threads),
        out_dir=Path(resolved_out),
        log_level=_env_log_level("TREESIR_LOG_LEVEL", "INFO"),
        progress=_env_flag("TREESIR_PROGRESS", "1"),
        block_size=max(1, _env_int("TREESIR_BLOCK_SIZE", 1000)),
        seed=_env_int("TREESIR_SEED", 0),
    )
