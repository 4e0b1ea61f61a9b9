"""Application settings and run configuration loading."""

import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from .errors import ConfigurationError

# Load environment variables
load_dotenv()

SCHEMA_VERSION = 1
SECTIONS = ("scenario", "detector", "baselines", "calibration", "experiment", "output", "data")


def _read_yaml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigurationError(f"Configuration file not found: {path}")
    try:
        with open(path, "r") as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Invalid YAML in {path}: {e}")
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigurationError(f"Top level of {path} must be a mapping")
    return document


class Settings:
    """Packaged defaults plus environment overrides."""

    def __init__(self):
        self.config_dir = Path(__file__).parent.parent / "config"
        self._load_defaults()

    def _load_defaults(self):
        """Load config/defaults.yaml."""
        self.defaults = _read_yaml(self.config_dir / "defaults.yaml")

    def config_path(self, name: str) -> Path:
        """Path of a packaged config file (``experiment_3d`` or ``experiment_3d.yaml``)."""
        file_name = name if name.endswith((".yaml", ".yml")) else f"{name}.yaml"
        return self.config_dir / file_name

    @property
    def log_level(self) -> str:
        return os.getenv("PPP_CPD_LOG_LEVEL") or self.defaults.get("logging", {}).get("level", "INFO")

    @property
    def workers(self) -> Optional[int]:
        raw = os.getenv("PPP_CPD_WORKERS")
        if raw is None or raw == "":
            return None
        try:
            value = int(raw)
        except ValueError:
            raise ConfigurationError(f"PPP_CPD_WORKERS must be an integer, got {raw!r}")
        if value < 1:
            raise ConfigurationError(f"PPP_CPD_WORKERS must be >= 1, got {value}")
        return value


def merge_sections(defaults: Dict[str, Any], document: Dict[str, Any]) -> Dict[str, Any]:
    """Overlay a run document on the defaults, one section at a time.

    Mapping sections are merged key by key (one level deep); list sections
    such as ``baselines`` are replaced wholesale.
    """
    merged: Dict[str, Any] = {"schema_version": document.get("schema_version",
                                                             defaults.get("schema_version"))}
    for section in SECTIONS:
        base = defaults.get(section)
        override = document.get(section)
        if isinstance(base, dict) and isinstance(override, dict):
            value = dict(base)
            value.update(override)
        else:
            value = override if section in document else base
        if value is not None:
            merged[section] = value
    return merged


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def load_run_config(path: Union[str, Path, None] = None):
    """Load and validate a run configuration.

    ``path`` may be a file path or the name of a packaged config. None
    returns the packaged defaults.
    """
    from ..domain.models import RunConfig

    document: Dict[str, Any] = {}
    source = "defaults"
    if path is not None:
        candidate = Path(path)
        if not candidate.exists() and settings.config_path(str(path)).exists():
            candidate = settings.config_path(str(path))
        document = _read_yaml(candidate)
        source = str(candidate)

    unknown = set(document) - set(SECTIONS) - {"schema_version"}
    if unknown:
        raise ConfigurationError(f"{source}: unknown top-level keys {sorted(unknown)}")
    version = document.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(
            f"{source}: unsupported schema_version {version!r}, expected {SCHEMA_VERSION}"
        )

    defaults = {k: v for k, v in settings.defaults.items() if k != "logging"}
    merged = merge_sections(defaults, document)
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigurationError(f"{source}: {_describe(e)}")


# Global settings instance
settings = Settings()
