import json
from pathlib import Path

import pytest

from treesir.config import Settings


@pytest.fixture
def settings(tmp_path: Path) -> Settings:
    return Settings(threads=1, out_dir=tmp_path / "out", log_level="INFO", progress=False, block_size=500, seed=0)


@pytest.fixture
def quiet_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("TREESIR_PROGRESS", "0")
    monkeypatch.setenv("TREESIR_THREADS", "1")
    monkeypatch.delenv("TREESIR_SEED", raising=False)
    monkeypatch.delenv("TREESIR_OUT_DIR", raising=False)


@pytest.fixture
def write_scenario(tmp_path: Path):
    def _write(payload: dict, name: str = "scenario.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        return path

    return _write

