"""Shared store for the per-criterion summary lines."""

LINES: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
