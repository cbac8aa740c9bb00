"""Integer money helpers.

All money in the package is an ``int`` count of minor units (cents) of one
stable accounting unit. Rates and fractions are carried as
:class:`fractions.Fraction` so every product can be rounded exactly.
"""

from __future__ import annotations

from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Sequence, Union

Rational = Union[int, float, str, Decimal, Fraction]

MINOR_PER_MAJOR = 100


def to_fraction(x: Rational) -> Fraction:
    """Exact fraction for ``x``; floats go through their shortest repr so 0.1 -> 1/10."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("bool is not a rate")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    if isinstance(x, Decimal):
        return Fraction(x)
    return Fraction(str(x).strip())


def round_half_up(x: Fraction | int) -> int:
    """Round a non-negative or negative rational to the nearest int, ties away from -inf."""
    if isinstance(x, int):
        return x
    return (2 * x.numerator + x.denominator) // (2 * x.denominator)


def mul_round(amount: int, rate: Fraction) -> int:
    """``round_half_up(amount * rate)`` in pure integer arithmetic."""
    num, den = rate.numerator, rate.denominator
    return (2 * amount * num + den) // (2 * den)


def to_minor(major: Rational) -> int:
    """Major units (e.g. ``"12.00"``) to minor units, rounding half-up."""
    return round_half_up(to_fraction(major) * MINOR_PER_MAJOR)


def fmt(minor: int) -> str:
    """Render minor units as a fixed two-decimal string."""
    sign = "-" if minor < 0 else ""
    q, r = divmod(abs(minor), MINOR_PER_MAJOR)
    return f"{sign}{q}.{r:02d}"


def largest_remainder(total: int, weights: Sequence[int | Fraction]) -> list[int]:
    """Split ``total`` minor units pro-rata to ``weights`` with exact conservation.

    Every share is floored first; the leftover units go one each to the
    largest fractional remainders, ties broken by lowest index.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    ws = [to_fraction(w) for w in weights]
    if any(w < 0 for w in ws):
        raise ValueError("weights must be non-negative")
    wsum = sum(ws, Fraction(0))
    if not ws:
        raise ValueError("no weights")
    if wsum == 0:
        raise ValueError("weights sum to zero")
    exact = [total * w / wsum for w in ws]
    floors = [e.numerator // e.denominator for e in exact]
    short = total - sum(floors)
    order = sorted(range(len(ws)), key=lambda i: (-(exact[i] - floors[i]), i))
    for i in order[:short]:
        floors[i] += 1
    return floors


def split_exact(total: int, parts: Iterable[Rational]) -> list[int]:
    """Largest-remainder split by arbitrary rational ``parts`` (e.g. tranche percentages)."""
    return largest_remainder(total, [to_fraction(p) for p in parts])
