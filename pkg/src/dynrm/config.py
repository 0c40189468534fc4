"""Strict JSON config loading shared by scenario, platform and generator files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Mapping


class ConfigError(ValueError):
    pass


def expect_keys(
    doc: Any,
    where: str,
    required: Iterable[str] = (),
    optional: Iterable[str] = (),
) -> None:
    """Reject missing and unknown keys; typos in experiment files must not pass silently."""
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    required = set(required)
    allowed = required | set(optional)
    missing = sorted(required - doc.keys())
    unknown = sorted(set(doc.keys()) - allowed)
    problems = []
    if missing:
        problems.append(f"missing keys {missing}")
    if unknown:
        problems.append(f"unknown keys {unknown} (allowed: {sorted(allowed)})")
    if problems:
        raise ConfigError(f"{where}: " + "; ".join(problems))


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc


def dump_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
