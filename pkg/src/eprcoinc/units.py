"""Exact ns <-> ps conversion."""

from __future__ import annotations

from decimal import Decimal, InvalidOperation

PS_PER_NS = 1000


def ns_to_ps(value) -> int:
    """Convert a nanosecond value to integer picoseconds, exactly.

    Accepts ints, decimal strings and floats (floats go through ``repr`` so
    ``1.8`` means 1800 ps rather than its binary approximation).
    """
    if isinstance(value, float):
        value = repr(value)
    try:
        ps = Decimal(value) * PS_PER_NS
    except InvalidOperation:
        raise ValueError(f"not a number: {value!r}") from None
    if ps != ps.to_integral_value():
        raise ValueError(f"{value} ns is not a whole number of picoseconds")
    return int(ps)


def ps_to_ns(ps: int) -> float:
    return ps / PS_PER_NS
