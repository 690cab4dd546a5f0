"""Flat ``key = value`` config files.

Keys are namespaced per module (``gains.k_p``, ``params.tau_max``,
``cmaes.population``). Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Raised for malformed config files or values that do not fit a field."""


def parse_config(text: str, source: str = "<string>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        values[key] = value
    return values


def read_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def write_config(path: str | Path, values: Mapping[str, Any], header: str | None = None) -> None:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend(f"{key} = {format_value(value)}" for key, value in values.items())
    Path(path).write_text("\n".join(lines) + "\n")


def section(values: Mapping[str, str], prefix: str) -> dict[str, str]:
    """Strip ``prefix.`` from matching keys."""
    dotted = prefix + "."
    return {k[len(dotted):]: v for k, v in values.items() if k.startswith(dotted)}


def _coerce(raw: str, current: Any, name: str) -> Any:
    try:
        if isinstance(current, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(v) for v in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def update_dataclass(obj: Any, values: Mapping[str, str], prefix: str) -> Any:
    """Return a copy of dataclass ``obj`` with fields overridden from ``prefix.*`` keys."""
    sub = section(values, prefix)
    if not sub:
        return obj
    names = {f.name for f in dataclasses.fields(obj)}
    unknown = sorted(set(sub) - names)
    if unknown:
        raise ConfigError(f"unknown {prefix} keys: {', '.join(unknown)}")
    changes = {k: _coerce(v, getattr(obj, k), f"{prefix}.{k}") for k, v in sub.items()}
    return dataclasses.replace(obj, **changes)


def dataclass_items(obj: Any, prefix: str) -> dict[str, Any]:
    return {f"{prefix}.{f.name}": getattr(obj, f.name) for f in dataclasses.fields(obj)}
