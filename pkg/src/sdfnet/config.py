"""Plain ``key = value`` config files.

Keys may be dotted (``model.layers = 6``) to address nested sections; lines
starting with ``#`` are comments. Values are JSON literals (numbers, true,
false, quoted strings, lists); anything else is kept as a bare string.
"""

from __future__ import annotations

import json
from pathlib import Path

from .exceptions import ConfigError


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def format_value(v) -> str:
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    return json.dumps(v)


def parse_kv(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        node = out
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: {key!r} conflicts with a scalar key")
        if leaf in node:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        node[leaf] = parse_value(value)
    return out


def format_kv(d: dict, prefix: str = "") -> str:
    lines = []
    for k, v in d.items():
        if isinstance(v, dict):
            lines.append(format_kv(v, prefix + k + ".").rstrip("\n"))
        else:
            lines.append(f"{prefix}{k} = {format_value(v)}")
    return "\n".join(l for l in lines if l) + "\n"


def read_kv(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    return parse_kv(path.read_text(encoding="utf-8"))


def write_kv(path, d: dict) -> None:
    Path(path).write_text(format_kv(d), encoding="utf-8")
