"""Small numeric helpers shared across modules."""

from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational, Real

SNAP_TOL = 1e-9


def ceil_snap(x: float, tol: float = SNAP_TOL) -> int:
    """Ceiling that treats values within ``tol`` (relative) of an integer as that integer.

    Quotients like ``log(9) / log(3)`` are integral in exact arithmetic but can
    land one ulp above the integer in floating point, which would push a plain
    ``math.ceil`` up by one.
    """
    nearest = round(x)
    if abs(x - nearest) <= tol * max(1.0, abs(x)):
        return int(nearest)
    return math.ceil(x)


def floor_snap(x: float, tol: float = SNAP_TOL) -> int:
    nearest = round(x)
    if abs(x - nearest) <= tol * max(1.0, abs(x)):
        return int(nearest)
    return math.floor(x)


def is_exact(*values: object) -> bool:
    """True when every value is a rational (int or Fraction), not a float."""
    return all(isinstance(v, Rational) for v in values)


def as_fraction(x: Real) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def logit(q: float) -> float:
    return math.log(q / (1.0 - q))


def expit(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def round_sig(x: float, digits: int = 12) -> float:
    """Round to ``digits`` significant digits (used for golden-file output)."""
    if x == 0 or not math.isfinite(x):
        return float(x)
    return float(f"{x:.{digits}g}")
