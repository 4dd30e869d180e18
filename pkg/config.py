import logging
import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

ENV_PREFIX = "ROBUSTMEAN_"


def _env_name(key: str) -> str:
    return key if key.startswith(ENV_PREFIX) else f"{ENV_PREFIX}{key}"


def _get_env(name: str, default: Optional[str] = None) -> Optional[str]:
    """Read ``ROBUSTMEAN_<name>``; empty values count as unset."""

    value = os.getenv(_env_name(name))
    if value is None or not value.strip():
        return default
    return value.strip()


def _get_bool_env(name: str, default: bool = False) -> bool:
    value = _get_env(name)
    if value is None:
        return default
    lowered = value.lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    return default


def _get_int_env(name: str, default: int) -> int:
    """Positive integer setting; anything unparsable or below 1 yields ``default``."""

    value = _get_env(name)
    if value is None:
        return default
    try:
        parsed = int(value)
    except ValueError:
        return default
    return parsed if parsed >= 1 else default


def _get_level_env(name: str, default: str = "INFO") -> str:
    value = (_get_env(name) or default).upper()
    return value if isinstance(logging.getLevelName(value), int) else default


class Settings:
    # parallel trial processes; results do not depend on it
    MAX_WORKERS = _get_int_env("MAX_WORKERS", 1)
    LOG_LEVEL = _get_level_env("LOG_LEVEL")
    OUTPUT_DIR = _get_env("OUTPUT_DIR", "results")
    METRICS_FILE = _get_env("METRICS_FILE")
    KEEP_PARTIAL_OUTPUT = _get_bool_env("KEEP_PARTIAL_OUTPUT", False)
