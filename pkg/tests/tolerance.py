"""Comparison rule for printed table cells."""

from __future__ import annotations

import math
from decimal import Decimal


def _parse(printed: str) -> tuple[float, int]:
    s = printed.strip().upper()
    scale = 1.0
    if s.endswith("K"):
        s, scale = s[:-1], 1e3
    mant = s.split("E")[0].lstrip("0.").replace(".", "")
    digits = max(1, min(2, len(mant)))
    return float(Decimal(s)) * scale, digits


def agrees(value: float, printed: str) -> bool:
    """Within 5% of the printed cell, or equal to it after rounding to its digits (2 at most)."""
    want, digits = _parse(printed)
    if want == 0.0:
        return value == 0.0
    if abs(value - want) <= 0.05 * abs(want):
        return True
    e = math.floor(math.log10(abs(value))) - digits + 1
    return round(value / 10.0**e) == round(want / 10.0**e)


def same_decade(value: float, power: int) -> bool:
    """A bare power-of-ten cell: log10 of the value rounds to ``power``."""
    return round(math.log10(value)) == power
