"""Closed-form bounds: super-view sizing, tail bounds, and the resilience frontier.

Everything inside a floor or ceiling is computed with exact rationals; only
the exponentials use floating point.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Iterable, TextIO


def as_fraction(value) -> Fraction:
    """Exact rational from an int, Fraction, decimal string, ``"p/q"`` string or float.

    Floats go through their shortest decimal repr, so ``0.05`` becomes ``1/20``.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as a rational")


def tau_liveness(n: int) -> int:
    return (n - 1) // 3


def k_views_for(delta_x, C: int = 0) -> int:
    """Views per super-view: ``ceil(log2(2/delta_x)) + C``."""
    dx = as_fraction(delta_x)
    if dx <= 0:
        raise ValueError("delta_x must be positive")
    target = 2 / dx
    k = 0
    while Fraction(2) ** k < target:
        k += 1
    return k + C


def superview_fail_prob(delta_x, g_val) -> float:
    return math.exp(-float(as_fraction(delta_x)) * float(g_val) / 6)


def chernoff_tail(mu: float, c: float) -> float:
    """Upper bound on P[X >= (1+c) mu] for a sum of independent indicators."""
    if c < 0 or mu < 0:
        raise ValueError("mu and c must be non-negative")
    return math.exp(-(c * c) * mu / (2 + c))


def counting_bound(size_omega: int, m, mu, c) -> int:
    """Most elements of a size-``size_omega`` family with values in [0, m] and
    mean ``mu`` that can have value at most ``c``."""
    m, mu, c = as_fraction(m), as_fraction(mu), as_fraction(c)
    if c >= mu:
        raise ValueError("counting bound needs c < mu")
    if not 0 <= mu <= m:
        raise ValueError("mean must lie in [0, m]")
    return math.floor(size_omega * (m - mu) / (m - c))


def _check_regime(n: int, tau: int, slack: Fraction) -> None:
    if slack >= Fraction(1, 2) or slack < 0:
        raise ValueError("x + delta_x must lie in [0, 1/2)")
    if 2 * tau >= n:
        raise ValueError("tau must be below n/2")


def achievable_ident(n: int, tau: int, x, delta_x, f: int) -> int:
    """Guaranteed number of identified nodes when ``f <= tau`` nodes misbehave."""
    slack = as_fraction(x) + as_fraction(delta_x)
    _check_regime(n, tau, slack)
    if not 0 <= f <= tau:
        raise ValueError("need 0 <= f <= tau")
    third = Fraction(n, 3)
    lost = ((f - third) + slack * (tau - third)) / (1 - slack)
    # below n/3 the expression exceeds f; nobody can be identified beyond the culprits
    return min(f, max(0, f - math.floor(lost)))


def converse_ident_upper(n: int, tau: int, k: int) -> int:
    """Strict upper bound on identifiable nodes against a k-interval partition attack."""
    if k < 3:
        raise ValueError("k must be at least 3")
    tl = tau_liveness(n)
    if tau <= tl:
        raise ValueError("tau must exceed the liveness resilience")
    return (tl + 2) - math.floor(Fraction(tau - (tl + 1), k - 2))


@dataclass(frozen=True)
class FrontierPoint:
    x: Fraction
    n: int
    tALmax: int
    achievable: int | None
    converse_upper: int | None
    regime_flag: str


def frontier_table(n: int, tau: int, grid: Iterable) -> list[FrontierPoint]:
    """Achievable and converse bounds per x, with ``f = tau`` and ``delta_x -> 0``."""
    rows = []
    third = Fraction(n, 3)
    for raw in grid:
        x = as_fraction(raw)
        if x >= Fraction(1, 2) or 2 * tau >= n:
            rows.append(FrontierPoint(x, n, tau, None, None, "impossible"))
            continue
        if tau <= third:
            rows.append(FrontierPoint(x, n, tau, tau, None, "trivial"))
            continue
        ach = achievable_ident(n, tau, x, 0, tau)
        if tau > tau_liveness(n):
            k = math.ceil(1 / x) if x > 0 else None
            conv = converse_ident_upper(n, tau, k) if k is not None else tau_liveness(n) + 2
        else:
            conv = None
        rows.append(FrontierPoint(x, n, tau, ach, conv, "ok"))
    return rows


def write_frontier_csv(points: Iterable[FrontierPoint], out: TextIO | None = None) -> str:
    buf = out or io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(FrontierPoint)])
    for p in points:
        w.writerow([
            f"{float(p.x):.6g}", p.n, p.tALmax,
            "" if p.achievable is None else p.achievable,
            "" if p.converse_upper is None else p.converse_upper,
            p.regime_flag,
        ])
    return buf.getvalue() if out is None else ""
