import logging
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
# layout plano: los módulos viven en la raíz del repositorio
sys.path.insert(0, str(ROOT))


@pytest.fixture
def scenarios_dir():
    return ROOT / "scenarios"


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in ("SURVEYDP_BUDGET", "SURVEYDP_WEIGHT_FLOOR", "SURVEYDP_LOG_LEVEL", "SURVEYDP_SEED"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture(autouse=True)
def _restore_logging():
    # cli.run() reconfigura el logging con fileConfig; se restaura tras cada test
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
