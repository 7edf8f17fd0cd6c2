"""Shared store for the acceptance summary printed at the end of a run."""

LINES = {}


def record(number, passed, detail):
    LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed
