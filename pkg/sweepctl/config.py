"""
Configuration: process settings from the environment and run-config loading.
"""

import logging
import os
from pathlib import Path

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from .exceptions import ConfigError
from .schemas import RunConfig

logger = logging.getLogger(__name__)

# Load environment variables from project root
_package_dir = Path(__file__).parent
_project_root = _package_dir.parent
load_dotenv(_project_root / ".env")


def _parse_bool(value: str | None, default: bool = False) -> bool:
    """Parse boolean from environment variable."""
    if value is None:
        return default
    return value.lower() in ("true", "1", "yes", "on")


def _parse_int(value: str | None, default: int) -> int:
    if value is None or not value.strip():
        return default
    try:
        return int(value)
    except ValueError:
        logger.warning("Ignoring non-integer setting %r, using %d", value, default)
        return default


class Config:
    """Process configuration from environment."""
    # Worker pool bound for sweeps (table1 rows, k-values, gradient coordinates)
    SWEEP_THREADS: int = max(1, _parse_int(os.getenv("SWEEP_THREADS"), min(8, os.cpu_count() or 1)))

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Absolute tolerance on g_i values for the active index set
    ACTIVE_TOL: float = float(os.getenv("SWEEP_ACTIVE_TOL", "1e-8"))

    DEFAULT_K: int = _parse_int(os.getenv("SWEEP_DEFAULT_K"), 200)
    OUTPUT_DIR: Path = Path(os.getenv("SWEEP_OUTPUT_DIR", "./runs"))

    # Solver progress lines on stderr
    SHOW_PROGRESS: bool = _parse_bool(os.getenv("SWEEP_PROGRESS"), default=True)


def _format_loc(loc: tuple) -> str:
    return ".".join(str(part) for part in loc)


def load_config(path: str | Path) -> RunConfig:
    """
    Read and validate a YAML run configuration.

    Args:
        path: Location of the YAML file

    Returns:
        Fully validated RunConfig with defaults applied

    Raises:
        ConfigError: file missing or unreadable, YAML syntax error, or schema
            violation (the message names the dotted path to the field)
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", str(path))
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config: {e}", str(path)) from e

    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", str(path))

    run_block = raw.get("run") or {}
    if isinstance(run_block, dict) and "k" not in run_block:
        raw["run"] = {**run_block, "k": Config.DEFAULT_K}

    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], _format_loc(first["loc"])) from e

    logger.info("Loaded config %s", path)
    return cfg
