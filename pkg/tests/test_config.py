"""Tests for environment settings."""

import json
import logging
from pathlib import Path

from src import config
from src.config import JsonLogFormatter, Settings


def test_defaults(monkeypatch):
    for name in ["JACOBI_RL_DATA_DIR", "JACOBI_RL_SEED", "JACOBI_RL_TOL_REL", "LOG_FORMAT"]:
        monkeypatch.delenv(name, raising=False)
    s = Settings()

    assert s.data_dir == Path("./runs")
    assert s.seed is None
    assert s.tol_rel == 1e-9
    assert s.log_format == "text"
    assert s.validate() == []


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("JACOBI_RL_SEED", "17")
    monkeypatch.setenv("JACOBI_RL_JOBS", "3")
    monkeypatch.setenv("JACOBI_RL_THRESHOLD_REL", "1e-6")
    s = config.reload_settings()
    try:
        assert s.seed == 17
        assert s.jobs == 3
        assert s.threshold_rel == 1e-6
        assert config.settings is s
    finally:
        monkeypatch.undo()
        config.reload_settings()


def test_seed_resolution(monkeypatch):
    monkeypatch.setenv("JACOBI_RL_SEED", "5")
    s = Settings()

    assert s.resolve_seed(9) == 9
    assert s.resolve_seed() == 5
    monkeypatch.delenv("JACOBI_RL_SEED")
    assert Settings().resolve_seed() == 0


def test_validate_reports_every_problem():
    s = Settings(jobs=0, tol_rel=0.0, log_level="LOUD", log_format="xml")

    assert len(s.validate()) == 4


def test_json_formatter_carries_extra_fields():
    record = logging.LogRecord("src.selfplay", logging.INFO, __file__, 1, "round %d", (2,), None)
    record.loss = 0.5
    payload = json.loads(JsonLogFormatter().format(record))

    assert payload["msg"] == "round 2"
    assert payload["level"] == "INFO"
    assert payload["loss"] == 0.5
