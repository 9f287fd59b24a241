"""Flat ``key = value`` config files with ``#`` comments."""

from __future__ import annotations

from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel

from rsrdiff.errors import ConfigFileError

ModelT = TypeVar("ModelT", bound=BaseModel)


def parse_config_text(content: str) -> dict[str, str]:
    """
    Parse config content into raw string values.

    Blank lines and anything after ``#`` are ignored. Dashes in keys become
    underscores; keys are otherwise case-sensitive and may not repeat.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(content.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got '{raw}'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ConfigFileError(f"line {lineno}: missing key")
        if key in values:
            raise ConfigFileError(f"line {lineno}: duplicate key '{key}'")
        values[key] = value
    return values


def parse_config_file(path: Path | str, model: type[ModelT]) -> ModelT:
    """Read ``path`` and validate it as ``model`` (pydantic coerces the strings)."""
    return model.model_validate(parse_config_text(Path(path).read_text()))
