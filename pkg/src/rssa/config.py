"""Flat key=value config files.

One `key = value` pair per line, `#` starts a comment, blank lines ignored.
Values are parsed as int, then float, then left as strings.  This format is
used for robot parameter files, safety-index parameter files, and the CLI
run config.
"""

from __future__ import annotations

from pathlib import Path


def parse_kv_text(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = _coerce(value.strip())
    return out


def parse_kv_file(path: str | Path) -> dict:
    return parse_kv_text(Path(path).read_text())


def format_kv(pairs: dict) -> str:
    lines = []
    for key, value in pairs.items():
        if isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _coerce(token: str):
    low = token.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token
