"""Plain-text key-value configuration files.

Format: one ``key = value`` per line, ``#`` starts a comment, blank lines
ignored. Values are parsed as bool, int, float, comma-separated tuples of
numbers, or left as strings. Dotted keys (``ppo.lr``) namespace into
sections.
"""

from __future__ import annotations

from typing import Any, Dict


class ConfigError(ValueError):
    """Malformed configuration file or inconsistent option values."""


def _parse_scalar(text: str) -> Any:
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_value(text: str) -> Any:
    text = text.strip()
    if "," in text:
        return tuple(_parse_scalar(p.strip()) for p in text.split(",") if p.strip())
    return _parse_scalar(text)


def parse_kv_text(text: str) -> Dict[str, Any]:
    """Parse key-value config text into a flat dict (dotted keys kept flat)."""
    out: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = parse_value(value)
    return out


def load_kv_file(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())


def dump_kv_text(values: Dict[str, Any]) -> str:
    """Inverse of :func:`parse_kv_text` for simple scalar/tuple values."""
    lines = []
    for key in sorted(values):
        val = values[key]
        if isinstance(val, (tuple, list)):
            rendered = ", ".join(repr(v) if not isinstance(v, str) else v for v in val)
        elif isinstance(val, bool):
            rendered = "true" if val else "false"
        elif isinstance(val, float):
            rendered = repr(val)
        else:
            rendered = str(val)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def section(flat: Dict[str, Any], prefix: str) -> Dict[str, Any]:
    """Extract ``prefix.*`` keys, stripping the prefix."""
    dot = prefix + "."
    return {k[len(dot):]: v for k, v in flat.items() if k.startswith(dot)}
