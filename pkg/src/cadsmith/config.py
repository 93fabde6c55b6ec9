"""Merged CLI configuration: flags > environment > config file > defaults.

The config file is JSON. String values may interpolate environment variables
with `${VAR}` so secrets stay out of checked-in files.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .llm import LlmConfig
from .metrics import MetricConfig
from .pipeline import PipelineConfig

SIDECAR_CMD_ENV = "CADSMITH_SIDECAR_CMD"

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(ValueError):
    pass


def _interpolate(value):
    if isinstance(value, str):
        def sub(match):
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"config references unset environment variable {name}")
            return os.environ[name]
        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


@dataclass
class CliConfig:
    llm: LlmConfig = field(default_factory=LlmConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    sidecar_cmd: str = ""
    seed: int = 0

    @classmethod
    def load(cls, config_file: str | None = None,
             overrides: dict | None = None) -> "CliConfig":
        """Build the merged view. `overrides` carries flag values (highest
        precedence); the environment supplies the sidecar command when set."""
        file_data: dict = {}
        if config_file:
            path = Path(config_file)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            try:
                file_data = _interpolate(json.loads(path.read_text()))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
            if not isinstance(file_data, dict):
                raise ConfigError(f"{path}: top level must be an object")

        merged: dict = {"llm": {}, "pipeline": {}, "metrics": {}}
        for section in ("llm", "pipeline", "metrics"):
            merged[section].update(file_data.get(section, {}))
        merged["sidecar_cmd"] = file_data.get("sidecar_cmd", "")
        merged["seed"] = file_data.get("seed", 0)

        if os.environ.get(SIDECAR_CMD_ENV):
            merged["sidecar_cmd"] = os.environ[SIDECAR_CMD_ENV]

        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if "." in key:
                section, name = key.split(".", 1)
                merged[section][name] = value
            else:
                merged[key] = value

        try:
            return cls(
                llm=LlmConfig(**merged["llm"]),
                pipeline=PipelineConfig(**merged["pipeline"]),
                metrics=MetricConfig(**merged["metrics"]),
                sidecar_cmd=merged["sidecar_cmd"],
                seed=int(merged["seed"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
