"""Flat `key = value` configuration dialect shared by the pipeline and the
scene generator: one pair per line, `#` comments, repeatable keys."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

__all__ = ["parse_keyvalue", "read_keyvalue_file", "get_single", "parse_bool"]


def parse_keyvalue(text: str) -> dict[str, list[str]]:
    """Parse the dialect into key -> list of values (repeated keys append)."""
    out: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out.setdefault(key, []).append(value)
    return out


def read_keyvalue_file(path) -> dict[str, list[str]]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_keyvalue(p.read_text(encoding="utf-8"))


def get_single(kv: dict[str, list[str]], key: str, default: str | None = None) -> str | None:
    values = kv.get(key)
    if not values:
        return default
    if len(values) > 1:
        raise ConfigError(f"key {key!r} given {len(values)} times, expected once")
    return values[0]


def parse_bool(value: str, key: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {value!r}")
