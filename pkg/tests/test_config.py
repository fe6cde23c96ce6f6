import pytest

import config
from errors import ConfigError


def test_budget_default():
    assert config.get_budget() == config.DEFAULT_BUDGET


def test_budget_override_wins_over_env(monkeypatch):
    monkeypatch.setenv("SURVEYDP_BUDGET", "10")
    assert config.get_budget() == 10
    assert config.get_budget(500) == 500


@pytest.mark.parametrize("raw", ["abc", "0", "-4"])
def test_invalid_budget_env(monkeypatch, raw):
    monkeypatch.setenv("SURVEYDP_BUDGET", raw)
    with pytest.raises(ConfigError):
        config.get_budget()


def test_weight_floor_and_seed(monkeypatch):
    monkeypatch.setenv("SURVEYDP_WEIGHT_FLOOR", "1e-9")
    monkeypatch.setenv("SURVEYDP_SEED", "42")
    assert config.get_weight_floor() == 1e-9
    assert config.get_default_seed() == 42


def test_log_level_is_upper(monkeypatch):
    monkeypatch.setenv("SURVEYDP_LOG_LEVEL", "debug")
    assert config.get_log_level() == "DEBUG"
