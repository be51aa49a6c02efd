"""Configuration management for jacobi-rl.

Loads process-wide settings from environment variables with sensible defaults.
Run-level knobs (search, rewards, training, bench) live in ``models.py``.
"""
from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


def _optional_int(name: str) -> Optional[int]:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return None
    return int(raw)


@dataclass
class Settings:
    """Process settings loaded from environment."""

    # Core
    data_dir: Path = field(default_factory=lambda: Path(os.environ.get("JACOBI_RL_DATA_DIR", "./runs")))
    seed: Optional[int] = field(default_factory=lambda: _optional_int("JACOBI_RL_SEED"))
    jobs: int = field(default_factory=lambda: int(os.environ.get("JACOBI_RL_JOBS", str(os.cpu_count() or 1))))

    # Numerics
    tol_rel: float = field(default_factory=lambda: float(os.environ.get("JACOBI_RL_TOL_REL", "1e-9")))
    threshold_rel: float = field(default_factory=lambda: float(os.environ.get("JACOBI_RL_THRESHOLD_REL", "1e-8")))

    # Logging
    log_level: str = field(default_factory=lambda: os.environ.get("LOG_LEVEL", "INFO"))
    log_format: str = field(default_factory=lambda: os.environ.get("LOG_FORMAT", "text"))

    def resolve_seed(self, seed: Optional[int] = None) -> int:
        """Explicit seed, then JACOBI_RL_SEED, then 0."""
        if seed is not None:
            return seed
        if self.seed is not None:
            return self.seed
        return 0

    def validate(self) -> list[str]:
        """Validate settings and return list of errors."""
        errors = []

        if self.jobs < 1:
            errors.append(f"JACOBI_RL_JOBS must be >= 1, got {self.jobs}")

        if not self.tol_rel > 0:
            errors.append(f"JACOBI_RL_TOL_REL must be > 0, got {self.tol_rel}")

        if not self.threshold_rel > 0:
            errors.append(f"JACOBI_RL_THRESHOLD_REL must be > 0, got {self.threshold_rel}")

        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors.append(f"LOG_LEVEL must be a logging level name, got {self.log_level}")

        if self.log_format not in ("text", "json"):
            errors.append(f"LOG_FORMAT must be text/json, got {self.log_format}")

        return errors


class JsonLogFormatter(logging.Formatter):
    """One JSON object per record; ``extra=`` fields are carried through."""

    _RESERVED = set(vars(logging.LogRecord("", 0, "", 0, "", None, None))) | {"message", "asctime"}

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "ts": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for key, value in vars(record).items():
            if key not in self._RESERVED:
                payload[key] = value
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


def configure_logging(cfg: Optional[Settings] = None, level: Optional[str] = None) -> None:
    """Install the single stream handler used by the CLI."""
    cfg = cfg or settings
    root = logging.getLogger("src")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    if cfg.log_format == "json":
        handler.setFormatter(JsonLogFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)-7s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel((level or cfg.log_level).upper())
    root.propagate = False


# Global settings instance
settings = Settings()


def reload_settings() -> Settings:
    """Reload settings from environment (useful for testing)."""
    global settings
    settings = Settings()
    return settings
