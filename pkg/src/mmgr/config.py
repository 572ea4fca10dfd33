"""Service configuration: key=value file, environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError

ENV_DATA_DIR = "MMGR_DATA_DIR"


@dataclass
class ServiceConfig:
    data_dir: Path = Path("mmgr-data")
    gate_epsilon: float = 0.0
    gate_abs_factor: float = 1.05
    drift_delta_factor: float = 0.05
    drift_lambda_factor: float = 50.0
    tuning_window: int = 500
    tune_tau: float = 1.0
    auto_run_jobs: bool = True
    workers: int = 1

    def validate(self) -> "ServiceConfig":
        if self.gate_epsilon < 0:
            raise ValidationError("gate_epsilon must be >= 0")
        if self.gate_abs_factor < 1.0:
            raise ValidationError("gate_abs_factor must be >= 1")
        if self.drift_delta_factor < 0 or self.drift_lambda_factor < 0:
            raise ValidationError("drift factors must be >= 0")
        if self.tuning_window < 1:
            raise ValidationError("tuning_window must be >= 1")
        if self.tune_tau < 0:
            raise ValidationError("tune_tau must be >= 0")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        return self


_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config_text(text: str) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno} is not key=value: {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def load_config(
    path: Path | str | None = None,
    data_dir: Path | str | None = None,
    env: dict | None = None,
) -> ServiceConfig:
    env = dict(os.environ if env is None else env)
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        raw = parse_config_text(text)

    config = ServiceConfig()
    field_types = {f.name: f.type for f in fields(ServiceConfig)}
    for key, value in raw.items():
        if key not in field_types:
            raise ValidationError(f"unknown config key {key!r}")
        current = getattr(config, key)
        try:
            if isinstance(current, bool):
                parsed = _BOOL_VALUES[value.lower()]
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            elif isinstance(current, Path):
                parsed = Path(value)
            else:
                parsed = value
        except (KeyError, ValueError):
            raise ValidationError(f"bad value for config key {key!r}: {value!r}")
        setattr(config, key, parsed)

    if env.get(ENV_DATA_DIR):
        config.data_dir = Path(env[ENV_DATA_DIR])
    if data_dir is not None:
        config.data_dir = Path(data_dir)
    return config.validate()
