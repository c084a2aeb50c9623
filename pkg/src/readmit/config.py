"""Flat ``key=value`` configuration files."""

from __future__ import annotations

import os
from pathlib import Path

from .errors import ConfigurationError


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        if key in out:
            raise ConfigurationError(f"{source}:{n}: duplicate key {key!r}")
        out[key.replace("-", "_")] = value.strip()
    return out


def read_kv_file(path: str | os.PathLike) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_kv(text, str(path))
