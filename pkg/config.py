# config.py
"""
Configuración por variables de entorno (.env soportado).
- SURVEYDP_BUDGET: presupuesto de enumeración (por defecto 2**20).
- SURVEYDP_WEIGHT_FLOOR: participación mínima (en todo ℝ) de una componente de mezcla.
- SURVEYDP_LOG_LEVEL: nivel de log de la CLI.
- SURVEYDP_SEED: semilla maestra por defecto.
"""

import os

from dotenv import load_dotenv

from errors import ConfigError

# carga .env
load_dotenv()

DEFAULT_BUDGET = 2 ** 20
DEFAULT_WEIGHT_FLOOR = 1e-15


def _env_int(name, default):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} debe ser un entero, se recibió {raw!r}")
    if value <= 0:
        raise ConfigError(f"{name} debe ser positivo, se recibió {value}")
    return value


def get_budget(override=None):
    """
    Presupuesto de enumeración: el override (flag --budget) gana sobre el entorno.
    Se relee el entorno en cada llamada para que los tests puedan usar monkeypatch.
    """
    if override is not None:
        if int(override) <= 0:
            raise ConfigError(f"el presupuesto debe ser positivo, se recibió {override}")
        return int(override)
    return _env_int("SURVEYDP_BUDGET", DEFAULT_BUDGET)


def get_weight_floor():
    raw = os.getenv("SURVEYDP_WEIGHT_FLOOR")
    if raw is None or raw.strip() == "":
        return DEFAULT_WEIGHT_FLOOR
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"SURVEYDP_WEIGHT_FLOOR debe ser numérico, se recibió {raw!r}")
    if value < 0:
        raise ConfigError("SURVEYDP_WEIGHT_FLOOR no puede ser negativo")
    return value


def get_log_level():
    return os.getenv("SURVEYDP_LOG_LEVEL", "WARNING").upper()


def get_default_seed():
    raw = os.getenv("SURVEYDP_SEED")
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"SURVEYDP_SEED debe ser un entero, se recibió {raw!r}")
