"""Collects one verdict per acceptance criterion for the terminal summary."""

from __future__ import annotations

RESULTS: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    RESULTS[criterion] = (bool(ok), detail)
    return bool(ok)
