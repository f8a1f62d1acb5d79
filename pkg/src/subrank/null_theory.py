"""Closed-form objects of the rank grid under independence.

Under independence every cell of the rank grid has probability ``m^-d``.
The limiting mean and variance of

    T = m^d * sum_r (P_n(r) - m^-d)^2

follow from the covariance ``sigma(r, s)`` of the conditional kernel
``h(r, x)``, which splits into products of one-dimensional Bernstein
integrals. All of these are evaluated exactly with
:class:`fractions.Fraction`.
"""
from __future__ import annotations

import enum
import itertools
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np  # type: ignore
from joblib import Parallel, delayed  # type: ignore
from scipy import integrate  # type: ignore

from subrank.combinatorics import (
    BernsteinIndex,
    SConstants,
    bernstein_value,
    concordance_integral,
    s_constants,
)
from subrank.errors import GridTooLarge
from subrank.grid import DENSE_CELL_LIMIT, RankGrid, cell_strides
from subrank.ranks import substream

_MC_STREAM = 2
_MC_BLOCK = 2**14


class Variant(enum.Enum):
    """Which form of the limiting variance to evaluate.

    ``PRINTED`` keeps ``+S2`` in the last variance term, ``SIGN_CORRECTED``
    uses ``-S2``, the form that vanishes in one dimension and agrees with
    the exact aggregation of the covariances.
    """

    PRINTED = "printed"
    SIGN_CORRECTED = "sign-corrected"


@dataclass(frozen=True)
class NullMoments:
    """Limits of ``E(T) n`` and ``Var(T) n^2`` under independence."""

    m: int
    d: int
    mean_limit: Fraction
    var_limit: Fraction
    variant: Variant
    constants: SConstants

    def __post_init__(self):
        if self.var_limit < 0:
            raise ValueError(f"negative limiting variance ({self.var_limit})")

    def as_dict(self) -> dict:
        return {
            "m": self.m,
            "d": self.d,
            "variant": self.variant.value,
            "mean_limit": str(self.mean_limit),
            "var_limit": str(self.var_limit),
            "mean_limit_float": float(self.mean_limit),
            "var_limit_float": float(self.var_limit),
            "s1": float(self.constants.s1),
            "s2": float(self.constants.s2),
        }


@dataclass(frozen=True)
class CovarianceTerms:
    """Integrals ``D_ij`` of products of the kernel pieces ``h_i(r) h_j(s)``.

    ``h_1`` is the product of Bernstein factors, ``h_2`` the product of their
    complements and ``h_3`` the constant ``m^-d``.
    """

    d11: Fraction
    d12: Fraction
    d13: Fraction
    d22: Fraction
    d23: Fraction
    d33: Fraction


def _check_m_d(m: int, d: int) -> None:
    if m < 2:
        raise ValueError(f"m must be at least 2 ({m})")
    if d < 1:
        raise ValueError(f"d must be positive ({d})")


def _check_rank(r: Sequence[int], m: int, d: int) -> tuple[int, ...]:
    r = tuple(int(c) for c in r)
    if len(r) != d or any(c < 1 or c > m for c in r):
        raise ValueError(f"rank vector {r} must have {d} components in [1, {m}]")
    return r


def independence_pmf(m: int, d: int, dense_limit: int = DENSE_CELL_LIMIT) -> RankGrid:
    """The grid of every rank vector having probability ``m^-d``.

    Examples
    --------
    >>> from subrank.null_theory import independence_pmf
    >>> independence_pmf(8, 2).weight((3, 5))
    0.015625
    """
    _check_m_d(m, d)
    if m**d > dense_limit:
        raise GridTooLarge(m**d, dense_limit)
    return RankGrid(m, d, np.full(m**d, float(m) ** -d))


def comonotone_pmf(m: int) -> RankGrid:
    """Two-dimensional grid of comonotone components, ``1/m`` on the diagonal."""
    _check_m_d(m, 2)
    return RankGrid.from_array(np.eye(m) / m)


def conditional_kernel_mean(r: Sequence[int], x, m: int):
    """The conditional kernel ``h(r, x)``.

    ``h(r, x) = (1/m) prod_l b(x_l) + 1/(m (m-1)^(d-1)) prod_l (1 - b(x_l))``
    where ``b = b_{m-1, r_l - 1}``. ``x`` is a point of ``[0, 1]^d`` or an
    array of such points (last axis of length ``d``).

    Examples
    --------
    >>> from subrank.null_theory import conditional_kernel_mean
    >>> conditional_kernel_mean((1, 1), (0.0, 0.0), 2)
    0.5
    >>> round(conditional_kernel_mean((2,), (0.3,), 4), 12)
    0.25
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1] if x.ndim else 1
    x = x.reshape(-1, d)
    r = _check_rank(r, m, d)
    if m < 2:
        raise ValueError(f"m must be at least 2 ({m})")

    factors = np.stack(
        [bernstein_value(BernsteinIndex(m - 1, c - 1), x[:, l]) for l, c in enumerate(r)],
        axis=-1,
    )
    value = np.prod(factors, axis=-1) / m + np.prod(1.0 - factors, axis=-1) / (
        m * (m - 1) ** (d - 1)
    )
    return value if len(value) > 1 else float(value[0])


def conditional_kernel_integral(r: Sequence[int], m: int) -> float:
    """Adaptive quadrature of ``h(r, .)`` over the unit cube."""
    d = len(r)
    value, _ = integrate.nquad(
        lambda *x: conditional_kernel_mean(r, x, m), [(0.0, 1.0)] * d
    )
    return value


@lru_cache(maxsize=64)
def _concordance_table(m: int) -> tuple[tuple[Fraction, ...], ...]:
    """``A(m-1, i, j)`` for ``0 <= i, j <= m-1``."""
    return tuple(
        tuple(concordance_integral(m - 1, i, j) for j in range(m)) for i in range(m)
    )


def _factor_terms(m: int, a: Fraction) -> tuple[Fraction, Fraction, Fraction]:
    """One-dimensional integrals of ``b b``, ``b (1-b)`` and ``(1-b)(1-b)``."""
    alpha_a = a / (2 * m - 1)
    return alpha_a, Fraction(1, m) - alpha_a, 1 - Fraction(2, m) + alpha_a


def _scales(m: int, d: int) -> tuple[Fraction, Fraction, Fraction]:
    return (
        Fraction(1, m * m),
        Fraction(1, m * m * (m - 1) ** (d - 1)),
        Fraction(1, m * m * (m - 1) ** (2 * d - 2)),
    )


def covariance_terms(r: Sequence[int], s: Sequence[int], m: int, d: int) -> CovarianceTerms:
    """Exact ``D_ij`` for rank vectors ``r`` and ``s``.

    Examples
    --------
    >>> from subrank.null_theory import covariance_terms
    >>> terms = covariance_terms((1,), (1,), 2, 1)
    >>> terms.d11, terms.d33
    (Fraction(1, 12), Fraction(1, 4))
    """
    _check_m_d(m, d)
    r, s = _check_rank(r, m, d), _check_rank(s, m, d)
    table = _concordance_table(m)

    p11, p12, p22 = Fraction(1), Fraction(1), Fraction(1)
    for rl, sl in zip(r, s):
        f11, f12, f22 = _factor_terms(m, table[rl - 1][sl - 1])
        p11 *= f11
        p12 *= f12
        p22 *= f22
    c11, c12, c22 = _scales(m, d)

    return CovarianceTerms(
        d11=c11 * p11,
        d12=c12 * p12,
        d13=Fraction(1, m ** (2 * d + 1)),
        d22=c22 * p22,
        d23=Fraction(m - 1, m ** (2 * d + 1)),
        d33=Fraction(1, m ** (2 * d)),
    )


def covariance_terms_quadrature(r: Sequence[int], s: Sequence[int], m: int) -> dict:
    """The ``D_ij`` of :func:`covariance_terms` by adaptive quadrature."""
    d = len(r)
    _check_m_d(m, d)
    r, s = _check_rank(r, m, d), _check_rank(s, m, d)

    def pieces(rank, x):
        b = np.asarray(
            [bernstein_value(BernsteinIndex(m - 1, c - 1), xl) for c, xl in zip(rank, x)]
        )
        return (
            np.prod(b) / m,
            np.prod(1.0 - b) / (m * (m - 1) ** (d - 1)),
            float(m) ** -d,
        )

    def term(i, j):
        value, _ = integrate.nquad(
            lambda *x: pieces(r, x)[i] * pieces(s, x)[j],
            [(0.0, 1.0)] * d,
            opts={"epsabs": 1e-12, "epsrel": 1e-12},
        )
        return value

    return {
        f"d{i + 1}{j + 1}": term(i, j)
        for i, j in ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
    }


def sigma_cov(r: Sequence[int], s: Sequence[int], m: int, d: int) -> Fraction:
    """Covariance of ``h(r, X)`` and ``h(s, X)`` for uniform ``X``.

    Examples
    --------
    >>> from subrank.null_theory import sigma_cov
    >>> sigma_cov((1,), (2,), 3, 1)
    Fraction(0, 1)
    """
    terms = covariance_terms(r, s, m, d)
    return terms.d11 + 2 * terms.d12 + terms.d22 - Fraction(1, m ** (2 * d))


def aggregate_moments(m: int, d: int) -> NullMoments:
    """Limiting moments from the covariances, summed one coordinate at a time.

    Every ``D`` term is a constant times a product of per-coordinate factors,
    so sums over ``r`` (or over ``r`` and ``s``) of products of ``D`` terms
    are powers of one-dimensional sums. The cost is ``O(m^2)`` whatever ``d``.

    Examples
    --------
    >>> from subrank.null_theory import aggregate_moments
    >>> moments = aggregate_moments(2, 2)
    >>> moments.mean_limit, moments.var_limit
    (Fraction(4, 9), Fraction(32, 81))
    """
    _check_m_d(m, d)
    table = _concordance_table(m)
    factors = [[_factor_terms(m, table[i][j]) for j in range(m)] for i in range(m)]
    scales = _scales(m, d)
    null = Fraction(1, m ** (2 * d))

    # G(r, s) = D11 + 2 D12 + D22 as (multiplicity, piece) pairs
    pieces = ((1, 0), (2, 1), (1, 2))

    diagonal = sum(
        (
            mult * scales[k] * sum((factors[i][i][k] for i in range(m)), Fraction(0)) ** d
            for mult, k in pieces
        ),
        Fraction(0),
    )
    sum_sigma_diag = diagonal - m**d * null

    total = sum(
        (
            mult * scales[k] * sum((f[k] for row in factors for f in row), Fraction(0)) ** d
            for mult, k in pieces
        ),
        Fraction(0),
    )
    squares = Fraction(0)
    for (mult_a, a), (mult_b, b) in itertools.product(pieces, repeat=2):
        cross = sum((f[a] * f[b] for row in factors for f in row), Fraction(0))
        squares += mult_a * mult_b * scales[a] * scales[b] * cross**d
    sum_sigma_sq = squares - 2 * null * total + m ** (2 * d) * null * null

    return NullMoments(
        m=m,
        d=d,
        mean_limit=m ** (d + 2) * sum_sigma_diag,
        var_limit=2 * m ** (2 * d + 4) * sum_sigma_sq,
        variant=Variant.SIGN_CORRECTED,
        constants=s_constants(m),
    )


def theorem2_closed_form(
    m: int, d: int, variant: Variant = Variant.SIGN_CORRECTED
) -> NullMoments:
    """Closed-form limiting moments in terms of ``S1`` and ``S2``.

    Examples
    --------
    >>> from subrank.null_theory import Variant, theorem2_closed_form
    >>> theorem2_closed_form(2, 2).var_limit
    Fraction(32, 81)
    >>> theorem2_closed_form(3, 1, Variant.PRINTED).var_limit > 0
    True
    """
    _check_m_d(m, d)
    constants = s_constants(m)
    s1, s2 = constants.s1, constants.s2
    k = m - 1
    sign = 1 if variant is Variant.PRINTED else -1

    var_limit = (
        2 * s2**d
        - 2 * m**4
        + 2 * k**4 * (Fraction(m**4 - 4 * m**3 + 6 * m**2 - 4 * m, 1) + s2) ** d / k ** (4 * d)
        + 12 * k**2 * (m**2 - 2 * m + s2) ** d / k ** (2 * d)
        + 8 * k * (m - s2) ** d / k**d
        + 8 * k**3 * (m**3 - 3 * m**2 + 3 * m + sign * s2) ** d / k ** (3 * d)
    )
    mean_limit = (
        s1**d
        - m**2
        + k**2 * (m**2 - 2 * m + s1) ** d / k ** (2 * d)
        + 2 * k * (m - s1) ** d / k**d
    )
    return NullMoments(
        m=m,
        d=d,
        mean_limit=mean_limit,
        var_limit=var_limit,
        variant=variant,
        constants=constants,
    )


def corollary_linear_part(m: int, d: int) -> float:
    """The term of the large-``m`` approximation that is linear in ``d``."""
    return 7.0 * math.sqrt(math.pi / 2.0) * d * math.sqrt(m)


def corollary_approx(m: int, d: int) -> float:
    """Large-``m`` approximation of the limiting variance.

    Examples
    --------
    >>> from subrank.null_theory import corollary_approx
    >>> round(corollary_approx(10, 5))
    200
    """
    _check_m_d(m, d)
    return 2.0 * math.sqrt(math.pi * m / 8.0) ** d + corollary_linear_part(m, d)


def border_dimension(m: int, variant: Variant = Variant.PRINTED, d_max: int = 64) -> int:
    """Largest ``d`` whose linear variance part is at least half the total.

    Dimensions are scanned up to ``d_max``.

    Note that the default compares against ``Variant.PRINTED``, the closed
    form as printed, not the sign-corrected one that matches
    ``aggregate_moments``. Only the printed variance gives the borders
    5, 4 and 4 at ``m`` = 10, 15 and 20. Pass ``Variant.SIGN_CORRECTED``
    for the border of the exact variance.

    Examples
    --------
    >>> from subrank.null_theory import border_dimension
    >>> [border_dimension(m) for m in (10, 15, 20)]
    [5, 4, 4]
    """
    _check_m_d(m, 1)
    border = 0
    for d in range(1, d_max + 1):
        var_limit = float(theorem2_closed_form(m, d, variant).var_limit)
        if corollary_linear_part(m, d) >= 0.5 * var_limit:
            border = d
    return border


def l2_pmf_distance(p: RankGrid, q: RankGrid) -> float:
    """``m^d`` times the squared Euclidean distance between two grids.

    Examples
    --------
    >>> from subrank.null_theory import comonotone_pmf, independence_pmf, l2_pmf_distance
    >>> round(l2_pmf_distance(comonotone_pmf(5), independence_pmf(5, 2)), 12)
    4.0
    """
    p.check_compatible(q)
    cells = np.union1d(p.nonzero()[0], q.nonzero()[0])
    diff = p.weights_at(cells) - q.weights_at(cells)
    return float(p.n_cells * np.sum(diff * diff))


def _mc_block(draw: Callable, m: int, d: int, seed, block: int, size: int) -> np.ndarray:
    rng = np.random.default_rng(substream(seed, _MC_STREAM, block))
    values = np.asarray(draw(size * m, rng), dtype=float).reshape(size, m, d)
    local = values.argsort(axis=1).argsort(axis=1)
    cells = local.reshape(-1, d) @ cell_strides(m, d)
    return np.bincount(cells, minlength=m**d)


def mc_rank_pmf(
    draw: Callable, m: int, d: int, reps: int, seed=0, n_jobs: int = 1
) -> RankGrid:
    """Monte Carlo estimate of the rank-vector law of an ``m``-sample.

    Parameters
    ----------
    draw : callable
        ``draw(size, rng)`` returns ``size`` independent observations as an
        array of shape ``(size, d)``.
    m : int
        Sub-sample size.
    d : int
        Dimension.
    reps : int
        Number of independent ``m``-samples.
    seed : int or SeedSequence, optional
        Seed of the sampling streams.
    n_jobs : int, optional
        Number of joblib workers.

    Returns
    -------
    RankGrid
        Average of the ``reps`` indicator grids.
    """
    _check_m_d(m, d)
    if reps < 1:
        raise ValueError(f"reps must be positive ({reps})")
    if m**d > DENSE_CELL_LIMIT:
        raise GridTooLarge(m**d, DENSE_CELL_LIMIT)

    blocks = [(j, min(_MC_BLOCK, reps - j * _MC_BLOCK)) for j in range(-(-reps // _MC_BLOCK))]
    if n_jobs == 1 or len(blocks) == 1:
        counts = [_mc_block(draw, m, d, seed, j, k) for j, k in blocks]
    else:
        counts = Parallel(n_jobs=n_jobs)(
            delayed(_mc_block)(draw, m, d, seed, j, k) for j, k in blocks
        )
    total = np.sum(counts, axis=0)
    cells = np.flatnonzero(total)
    return RankGrid.from_counts(m, d, cells, total[cells], reps)


def cell_midpoints(m: int, d: int) -> np.ndarray:
    """Points ``(r - 1/2) / m`` of every cell, in flat cell order."""
    axes = (np.arange(1, m + 1) - 0.5) / m
    mesh = np.meshgrid(*([axes] * d), indexing="ij")
    return np.stack([axis.reshape(-1) for axis in mesh], axis=-1)


def mc_convergence_deviation(
    grid: RankGrid, density: Callable, box: tuple[float, float] = (0.25, 0.75)
) -> tuple[float, float]:
    """Deviation of ``m^d P(r)`` from a copula density at cell midpoints.

    Only cells whose midpoint lies inside ``box`` in every coordinate are
    compared.

    Returns
    -------
    tuple of float
        Largest and root-mean-square absolute deviation.
    """
    points = cell_midpoints(grid.m, grid.d)
    inside = np.all((points >= box[0]) & (points <= box[1]), axis=1)
    if not np.any(inside):
        raise ValueError(f"no cell midpoint lies in {box}")

    cells = np.flatnonzero(inside)
    scaled = grid.n_cells * grid.weights_at(cells)
    deviation = np.abs(scaled - np.asarray(density(points[inside]), dtype=float))
    return float(deviation.max()), float(np.sqrt(np.mean(deviation**2)))
