"""Service configuration: JSON file with environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from matchscope.errors import ValidationError

ENV_DATA_ROOT = "MATCHSCOPE_DATA_ROOT"
ENV_PORT = "MATCHSCOPE_PORT"
ENV_EXTRACTOR_URL = "MATCHSCOPE_EXTRACTOR_URL"
ENV_MAX_UPLOAD = "MATCHSCOPE_MAX_UPLOAD_BYTES"

DEFAULT_PORT = 8425
DEFAULT_MAX_UPLOAD_BYTES = 64 * 1024 * 1024


@dataclass(frozen=True)
class ServiceConfig:
    data_root: Path
    port: int = DEFAULT_PORT
    extractor_url: str | None = None
    extractor_timeout: float = 10.0
    extractor_retries: int = 1
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD_BYTES

    def __post_init__(self) -> None:
        object.__setattr__(self, "data_root", Path(self.data_root))
        if not isinstance(self.port, int) or not (1 <= self.port <= 65535):
            raise ValidationError(f"port must be in [1, 65535], got {self.port!r}")
        if self.max_upload_bytes < 1:
            raise ValidationError("max_upload_bytes must be >= 1")
        if self.extractor_timeout <= 0:
            raise ValidationError("extractor_timeout must be > 0")
        if self.extractor_retries < 0:
            raise ValidationError("extractor_retries must be >= 0")


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] = os.environ,
    data_root: str | Path | None = None,
) -> ServiceConfig:
    """Resolve configuration: defaults < config file < environment < argument."""
    values: dict = {}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ValidationError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise ValidationError("config file must hold a JSON object")
        known = {
            "data_root", "port", "extractor_url", "extractor_timeout",
            "extractor_retries", "max_upload_bytes",
        }
        unknown = obj.keys() - known
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(obj)

    if ENV_DATA_ROOT in env:
        values["data_root"] = env[ENV_DATA_ROOT]
    if ENV_PORT in env:
        try:
            values["port"] = int(env[ENV_PORT])
        except ValueError as exc:
            raise ValidationError(f"{ENV_PORT} must be an integer") from exc
    if ENV_EXTRACTOR_URL in env:
        values["extractor_url"] = env[ENV_EXTRACTOR_URL] or None
    if ENV_MAX_UPLOAD in env:
        try:
            values["max_upload_bytes"] = int(env[ENV_MAX_UPLOAD])
        except ValueError as exc:
            raise ValidationError(f"{ENV_MAX_UPLOAD} must be an integer") from exc

    if data_root is not None:
        values["data_root"] = data_root
    if "data_root" not in values:
        values["data_root"] = Path.cwd() / "matchscope_data"
    return ServiceConfig(**values)
