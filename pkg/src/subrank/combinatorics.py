"""Exact binomial arithmetic behind the null moments of the rank grid.

Every quantity here is an exact :class:`fractions.Fraction` built from
arbitrary-precision integers. Floats only appear in :func:`bernstein_value`
and :func:`stirling_bound_check`, where they are the documented output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np  # type: ignore

ExactRational = Fraction


def binomial(n: int, k: int) -> Fraction:
    """Binomial coefficient as an exact rational.

    Examples
    --------
    >>> from subrank.combinatorics import binomial
    >>> binomial(4, 2)
    Fraction(6, 1)
    >>> binomial(5, 7)
    Fraction(0, 1)
    >>> binomial(20, 10)
    Fraction(184756, 1)
    """
    if n < 0:
        raise ValueError(f"n must be nonnegative ({n})")
    if k < 0 or k > n:
        return Fraction(0)
    return Fraction(math.comb(n, k))


@dataclass(frozen=True)
class BernsteinIndex:
    degree: int
    index: int

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError(f"degree must be nonnegative ({self.degree})")
        if not 0 <= self.index <= self.degree:
            raise ValueError(f"index must be in [0, {self.degree}] ({self.index})")


def bernstein_value(idx: BernsteinIndex, x):
    """Evaluate the Bernstein polynomial ``C(m,r) x^r (1-x)^(m-r)``.

    Parameters
    ----------
    idx : BernsteinIndex
        Degree and index of the polynomial.
    x : float or ndarray of float
        Evaluation point(s) in [0, 1].

    Returns
    -------
    float or ndarray of float
        Value(s) of the polynomial.

    Examples
    --------
    >>> from subrank.combinatorics import BernsteinIndex, bernstein_value
    >>> float(bernstein_value(BernsteinIndex(1, 0), 0.0))
    1.0
    >>> round(sum(bernstein_value(BernsteinIndex(5, r), 0.3) for r in range(6)), 12)
    1.0
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any((x_arr < 0.0) | (x_arr > 1.0)):
        raise ValueError("Bernstein polynomials are evaluated on [0, 1]")

    m, r = idx.degree, idx.index
    value = math.comb(m, r) * x_arr**r * (1.0 - x_arr) ** (m - r)
    return value if value.ndim else float(value)


def _check_concordance_args(m: int, r: int, s: int) -> None:
    if m < 0:
        raise ValueError(f"m must be nonnegative ({m})")
    if not (0 <= r <= m and 0 <= s <= m):
        raise ValueError(f"indices ({r}, {s}) out of range [0, {m}]")


def concordance_integral(m: int, r: int, s: int) -> Fraction:
    """The normalized Bernstein product integral ``C(m,r)C(m,s)/C(2m,r+s)``.

    ``(2m+1)`` times the integral of ``b_{m,r} b_{m,s}`` over [0, 1].

    Examples
    --------
    >>> from subrank.combinatorics import concordance_integral
    >>> concordance_integral(3, 0, 0)
    Fraction(1, 1)
    >>> concordance_integral(2, 1, 1)
    Fraction(2, 3)
    """
    _check_concordance_args(m, r, s)
    return binomial(m, r) * binomial(m, s) / binomial(2 * m, r + s)


def concordance_integral_paths(m: int, r: int, s: int) -> Fraction:
    """Lattice-path form ``C(r+s,r)C(2m-r-s,m-r)/C(2m,m)`` of the same integral."""
    _check_concordance_args(m, r, s)
    return binomial(r + s, r) * binomial(2 * m - r - s, m - r) / binomial(2 * m, m)


class IdentityCheck(NamedTuple):
    name: str
    lhs: Fraction
    rhs: Fraction

    @property
    def passed(self) -> bool:
        return self.lhs == self.rhs


@dataclass(frozen=True)
class IdentityReport:
    m: int
    checks: tuple[IdentityCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> list[IdentityCheck]:
        return [check for check in self.checks if not check.passed]


def _path_term(m: int, r: int, s: int) -> int:
    return math.comb(r + s, r) * math.comb(2 * m - r - s, m - r)


def identity_suite(m: int) -> IdentityReport:
    """Check the three lattice-path identities by exact summation.

    A failed identity is reported, not raised.

    Examples
    --------
    >>> from subrank.combinatorics import identity_suite
    >>> report = identity_suite(2)
    >>> report.passed
    True
    >>> [check.name for check in report.checks]
    ['row_sum(s=0)', 'row_sum(s=1)', 'row_sum(s=2)', 'diagonal', 'squares']
    """
    if m < 1:
        raise ValueError(f"m must be positive ({m})")

    checks = [
        IdentityCheck(
            f"row_sum(s={s})",
            Fraction(sum(_path_term(m, r, s) for r in range(m + 1))),
            Fraction(math.comb(2 * m + 1, m)),
        )
        for s in range(m + 1)
    ]
    checks.append(
        IdentityCheck(
            "diagonal",
            Fraction(
                sum(math.comb(2 * r, r) * math.comb(2 * m - 2 * r, m - r) for r in range(m + 1))
            ),
            Fraction(4**m),
        )
    )
    checks.append(
        IdentityCheck(
            "squares",
            Fraction(
                sum(
                    _path_term(m, r, s) ** 2
                    for r in range(m + 1)
                    for s in range(m + 1)
                )
            ),
            Fraction(math.comb(4 * m + 1, 2 * m)),
        )
    )
    return IdentityReport(m=m, checks=tuple(checks))


class ConcordanceSums(NamedTuple):
    row: tuple[Fraction, ...]
    diagonal: Fraction
    squares: Fraction


def concordance_sums(m: int) -> ConcordanceSums:
    """Sums of ``A(m, r, s)`` over rows, the diagonal and of its squares.

    Examples
    --------
    >>> from subrank.combinatorics import concordance_sums
    >>> sums = concordance_sums(2)
    >>> sums.row[0], sums.diagonal, sums.squares
    (Fraction(5, 3), Fraction(8, 3), Fraction(7, 2))
    """
    values = [[concordance_integral(m, r, s) for s in range(m + 1)] for r in range(m + 1)]
    return ConcordanceSums(
        row=tuple(sum((values[r][s] for r in range(m + 1)), Fraction(0)) for s in range(m + 1)),
        diagonal=sum((values[r][r] for r in range(m + 1)), Fraction(0)),
        squares=sum((a * a for row in values for a in row), Fraction(0)),
    )


class SConstants(NamedTuple):
    s1: Fraction
    s2: Fraction
    r1: Fraction
    r2: Fraction


def s_constants(m: int) -> SConstants:
    """Constants driving the limiting null moments.

    ``R1`` and ``R2`` are the per-coordinate diagonal and squared sums of the
    concordance integral at degree ``m - 1`` divided by ``2m - 1`` (once and
    twice). ``S1 = m R1`` and ``S2 = m^2 R2``.

    Examples
    --------
    >>> from subrank.combinatorics import s_constants
    >>> s_constants(2).s1, s_constants(2).s2
    (Fraction(4, 3), Fraction(10, 9))
    """
    if m < 2:
        raise ValueError(f"m must be at least 2 ({m})")

    central = (2 * m - 1) * math.comb(2 * m - 2, m - 1)
    r1 = Fraction(4 ** (m - 1), central)
    r2 = Fraction(math.comb(4 * m - 3, 2 * m - 2), central**2)
    s1 = Fraction(m * 4 ** (m - 1), central)
    s2 = Fraction(m * m * math.comb(4 * m - 3, 2 * m - 2), central**2)

    return SConstants(s1=s1, s2=s2, r1=r1, r2=r2)


class StirlingRow(NamedTuple):
    m: int
    c_m: float
    passed: bool


@dataclass(frozen=True)
class StirlingReport:
    rows: tuple[StirlingRow, ...]

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)


def stirling_correction(m: int) -> float:
    """``c_m`` in ``C(2m,m) = 4^m / sqrt(pi m) * (1 - c_m / m)``.

    The ratio ``C(2m,m) / 4^m`` is formed exactly before the single
    conversion to float.
    """
    ratio = float(Fraction(math.comb(2 * m, m), 4**m))
    return m * (1.0 - ratio * math.sqrt(math.pi * m))


def stirling_bound_check(m_max: int) -> StirlingReport:
    """Check ``1/9 < c_m < 1/8`` for every ``m`` up to ``m_max``."""
    if m_max < 1:
        raise ValueError(f"m_max must be positive ({m_max})")

    rows = []
    for m in range(1, m_max + 1):
        c_m = stirling_correction(m)
        rows.append(StirlingRow(m=m, c_m=c_m, passed=1.0 / 9.0 < c_m < 1.0 / 8.0))
    return StirlingReport(rows=tuple(rows))
