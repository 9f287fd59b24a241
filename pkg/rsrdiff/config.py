"""Environment configuration helpers."""

import logging
import os

DEFAULT_LOG_LEVEL = "INFO"


def worker_count() -> int:
    """Return the worker cap from RSRDIFF_THREADS, or the CPU count when unset."""
    raw = os.environ.get("RSRDIFF_THREADS")
    if not raw:
        return max(1, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise RuntimeError(
            f"RSRDIFF_THREADS must be a positive integer, got '{raw}'; "
            "unset it to use every available core."
        )
    return value


def log_level() -> int:
    """Logging level from RSRDIFF_LOG_LEVEL (name such as DEBUG or INFO)."""
    name = os.environ.get("RSRDIFF_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        raise RuntimeError(f"RSRDIFF_LOG_LEVEL '{name}' is not a logging level")
    return level
