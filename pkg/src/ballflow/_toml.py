"""Minimal TOML emitter for the restricted schemas this package writes.

Supports scalars, homogeneous arrays, nested tables, and arrays of tables,
which covers scene configs and scenario scripts. Reading uses tomli.
"""
from __future__ import annotations

from typing import Any


def dumps(data: dict[str, Any]) -> str:
    lines: list[str] = []
    _emit_table(data, prefix="", lines=lines)
    return "\n".join(lines) + "\n"


def _emit_table(table: dict[str, Any], prefix: str, lines: list[str]) -> None:
    scalars = {k: v for k, v in table.items() if not _is_table(v) and not _is_table_array(v)}
    subtables = {k: v for k, v in table.items() if _is_table(v)}
    table_arrays = {k: v for k, v in table.items() if _is_table_array(v)}

    for key, value in scalars.items():
        lines.append(f"{_key(key)} = {_value(value)}")
    for key, value in subtables.items():
        name = f"{prefix}.{_key(key)}" if prefix else _key(key)
        lines.append("")
        lines.append(f"[{name}]")
        _emit_table(value, name, lines)
    for key, items in table_arrays.items():
        name = f"{prefix}.{_key(key)}" if prefix else _key(key)
        for item in items:
            lines.append("")
            lines.append(f"[[{name}]]")
            _emit_table(item, name, lines)


def _is_table(v: Any) -> bool:
    return isinstance(v, dict)


def _is_table_array(v: Any) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(isinstance(x, dict) for x in v)


def _key(key: str) -> str:
    if key and all(c.isalnum() or c in "-_" for c in key):
        return key
    return '"' + key.replace('"', '\\"') + '"'


def _value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__} to TOML")
