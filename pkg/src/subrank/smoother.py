"""Bernstein-smoothed copulas and joint densities built on rank grids.

A rank grid ``P`` on ``{1..m}^d`` is smoothed into the copula density

    c(u) = sum_r P(r) prod_l beta(u_l; r_l, m - r_l + 1)

which is a proper density on the unit cube. Kernel density estimates of the
marginals carry it back to the scale of the data.
"""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np  # type: ignore
from scipy.stats import beta, gaussian_kde, norm  # type: ignore

from subrank.errors import DegenerateSlice, ZeroVarianceColumn
from subrank.grid import RankGrid
from subrank.ranks import EstimatorConfig, SampleMatrix, estimate, pseudo_observations

_CELL_CHUNK = 4096
_PPF_POINTS = 4097


class SmoothedCopula:
    """Copula density of a rank grid smoothed with Beta kernels.

    Parameters
    ----------
    grid : RankGrid
        Rank grid with unit total weight.

    Examples
    --------
    >>> from subrank.null_theory import comonotone_pmf
    >>> from subrank.smoother import SmoothedCopula
    >>> SmoothedCopula(comonotone_pmf(2)).density([[0.0, 0.0]]).tolist()
    [2.0]
    """

    def __init__(self, grid: RankGrid):
        self._grid = grid
        cells, weights = grid.nonzero()
        self._ranks = grid.rank_vectors(cells)
        self._weights = weights

    @property
    def grid(self) -> RankGrid:
        return self._grid

    @property
    def m(self) -> int:
        return self._grid.m

    @property
    def d(self) -> int:
        return self._grid.d

    @property
    def cell_ranks(self) -> np.ndarray:
        """One-based rank vectors of the cells with positive weight."""
        return self._ranks

    @property
    def cell_weights(self) -> np.ndarray:
        return self._weights

    def kernel_table(self, u: np.ndarray) -> np.ndarray:
        """Beta densities of ``u`` for every rank, shape ``(len(u), m)``."""
        r = np.arange(1, self.m + 1)
        return beta.pdf(np.asarray(u, dtype=float)[:, None], r, self.m - r + 1)

    def _points(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1, self.d)
        if np.any((u < 0.0) | (u > 1.0)):
            raise ValueError("copula densities are evaluated on [0, 1]^d")
        return u

    def density(self, u) -> np.ndarray:
        """Density at the rows of ``u`` (shape ``(k, d)``)."""
        u = self._points(u)
        tables = [self.kernel_table(u[:, l]) for l in range(self.d)]

        value = np.zeros(len(u))
        for start in range(0, len(self._weights), _CELL_CHUNK):
            ranks = self._ranks[start : start + _CELL_CHUNK]
            product = np.ones((len(u), len(ranks)))
            for l, table in enumerate(tables):
                product *= table[:, ranks[:, l] - 1]
            value += product @ self._weights[start : start + _CELL_CHUNK]
        return value

    def log_likelihood(self, u) -> float:
        """Sum of the log density at the rows of ``u``."""
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(self.density(u))))

    def marginal_mean(self, axis: int) -> float:
        """Mean of coordinate ``axis`` under the smoothed copula."""
        if not 0 <= axis < self.d:
            raise ValueError(f"axis must be in [0, {self.d}) ({axis})")
        return float(np.sum(self._weights * self._ranks[:, axis]) / (self.m + 1))


def smooth(grid: RankGrid) -> SmoothedCopula:
    """Bernstein smoothing of a rank grid."""
    if not np.isclose(grid.total_weight, 1.0, rtol=0.0, atol=1e-9):
        raise ValueError(f"grid weights must sum to one ({grid.total_weight})")
    return SmoothedCopula(grid)


def sample_copula(copula: SmoothedCopula, k: int, seed=0) -> np.ndarray:
    """Draw ``k`` points of ``[0, 1]^d`` from a smoothed copula.

    A cell is drawn with its grid weight, then every coordinate from its
    Beta kernel.
    """
    if k < 1:
        raise ValueError(f"number of points must be positive ({k})")
    rng = np.random.default_rng(seed)
    weights = copula.cell_weights / copula.cell_weights.sum()
    ranks = copula.cell_ranks[rng.choice(len(weights), size=k, p=weights)]
    return rng.beta(ranks, copula.m - ranks + 1)


@dataclass(frozen=True, eq=False)
class MarginalModel:
    """Gaussian kernel density estimate of one coordinate.

    The bandwidth follows Silverman's rule ``1.06 sd n^(-1/5)``.
    """

    data: np.ndarray
    bandwidth: float
    _kde: gaussian_kde = field(repr=False, compare=False)
    _ppf_grid: tuple[np.ndarray, np.ndarray] = field(repr=False, compare=False)

    @classmethod
    def fit(cls, column, column_index: int = 0) -> "MarginalModel":
        """Fit the estimate to a column of data.

        Examples
        --------
        >>> from subrank.smoother import MarginalModel
        >>> round(float(MarginalModel.fit([0.0, 1.0]).cdf([0.5])[0]), 12)
        0.5
        """
        data = np.sort(np.asarray(column, dtype=float))
        if len(data) < 2:
            raise ValueError("kernel density estimation needs at least two observations")
        sd = np.std(data, ddof=1)
        if not sd > 0.0:
            raise ZeroVarianceColumn(column_index)

        factor = 1.06 * len(data) ** -0.2
        bandwidth = factor * sd
        kde = gaussian_kde(data, bw_method=factor)

        x = np.linspace(data[0] - 8.0 * bandwidth, data[-1] + 8.0 * bandwidth, _PPF_POINTS)
        cdf = np.mean(norm.cdf((x[:, None] - data[None, :]) / bandwidth), axis=1)
        return cls(data=data, bandwidth=bandwidth, _kde=kde, _ppf_grid=(cdf, x))

    def pdf(self, x) -> np.ndarray:
        return self._kde(np.atleast_1d(np.asarray(x, dtype=float)))

    def cdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.mean(norm.cdf((x[:, None] - self.data[None, :]) / self.bandwidth), axis=1)

    def ppf(self, u) -> np.ndarray:
        """Pseudo-inverse of the CDF, interpolated on a cached grid."""
        cdf, x = self._ppf_grid
        return np.interp(np.atleast_1d(np.asarray(u, dtype=float)), cdf, x)


def silverman_bandwidth(column) -> float:
    """``1.06 sd n^(-1/5)`` for a column of data.

    Examples
    --------
    >>> from subrank.smoother import silverman_bandwidth
    >>> round(silverman_bandwidth([-1.0, 1.0] * 50) / (100 / 99) ** 0.5, 3)
    0.422
    """
    column = np.asarray(column, dtype=float)
    return float(1.06 * np.std(column, ddof=1) * len(column) ** -0.2)


def fit_marginals(sample: SampleMatrix) -> list[MarginalModel]:
    """One kernel density estimate per column."""
    if sample.n < 2:
        raise ValueError("kernel density estimation needs at least two observations")
    return [MarginalModel.fit(sample.values[:, l], l) for l in range(sample.d)]


class JointDensityModel:
    """Joint density ``c(F_1(x_1), ..., F_d(x_d)) prod_l f_l(x_l)``.

    Parameters
    ----------
    copula : SmoothedCopula
        Smoothed rank grid.
    marginals : list of MarginalModel
        One fitted marginal per coordinate.
    """

    def __init__(self, copula: SmoothedCopula, marginals: Sequence[MarginalModel]):
        if len(marginals) != copula.d:
            raise ValueError(
                f"number of marginals ({len(marginals)}) does not match the dimension"
                f" ({copula.d})"
            )
        self._copula = copula
        self._marginals = list(marginals)

    @classmethod
    def fit(
        cls, sample: SampleMatrix, config: EstimatorConfig, n_jobs: int = 1
    ) -> "JointDensityModel":
        """Estimate the rank grid of ``sample`` and fit its marginals."""
        return cls(smooth(estimate(sample, config, n_jobs=n_jobs)), fit_marginals(sample))

    @property
    def copula(self) -> SmoothedCopula:
        return self._copula

    @property
    def marginals(self) -> list[MarginalModel]:
        return list(self._marginals)

    @property
    def d(self) -> int:
        return self._copula.d

    def density(self, x) -> np.ndarray:
        """Joint density at the rows of ``x`` (shape ``(k, d)``)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        u = np.column_stack([f.cdf(x[:, l]) for l, f in enumerate(self._marginals)])
        scale = np.prod(
            np.column_stack([f.pdf(x[:, l]) for l, f in enumerate(self._marginals)]), axis=1
        )
        return self._copula.density(np.clip(u, 0.0, 1.0)) * scale

    def copula_log_likelihood(self, sample: SampleMatrix) -> float:
        """Copula log-likelihood of a sample at its pseudo-observations."""
        return self._copula.log_likelihood(pseudo_observations(sample))

    def conditional_slice(
        self,
        fixed: Mapping[int, float],
        x_axis: np.ndarray,
        y_axis: np.ndarray,
    ) -> np.ndarray:
        """Density over two free coordinates given the others, normalized on the grid.

        Parameters
        ----------
        fixed : mapping of int to float
            Values of every coordinate but two.
        x_axis, y_axis : ndarray of float
            Evaluation points of the first and second free coordinates.

        Returns
        -------
        ndarray of float
            Field of shape ``(len(x_axis), len(y_axis))`` summing to one.
        """
        free = [l for l in range(self.d) if l not in fixed]
        if len(free) != 2 or any(not 0 <= l < self.d for l in fixed):
            raise ValueError(
                f"exactly two of the {self.d} coordinates must be left free ({sorted(fixed)})"
            )
        x_axis = np.asarray(x_axis, dtype=float)
        y_axis = np.asarray(y_axis, dtype=float)
        if not (np.all(np.isfinite(x_axis)) and np.all(np.isfinite(y_axis))):
            raise ValueError("slice axes must be finite")

        copula, m = self._copula, self._copula.m
        ranks, weights = copula.cell_ranks, copula.cell_weights.copy()
        for l, value in fixed.items():
            u = np.clip(self._marginals[l].cdf([value]), 0.0, 1.0)
            weights = weights * copula.kernel_table(u)[0, ranks[:, l] - 1]

        a, b = free
        pair = np.zeros((m, m))
        np.add.at(pair, (ranks[:, a] - 1, ranks[:, b] - 1), weights)

        fa, fb = self._marginals[a], self._marginals[b]
        kx = copula.kernel_table(np.clip(fa.cdf(x_axis), 0.0, 1.0))
        ky = copula.kernel_table(np.clip(fb.cdf(y_axis), 0.0, 1.0))
        values = (kx @ pair @ ky.T) * fa.pdf(x_axis)[:, None] * fb.pdf(y_axis)[None, :]

        total = values.sum()
        if not total > 0.0:
            raise DegenerateSlice(f"conditional density vanishes on the grid (fixed={dict(fixed)})")
        return values / total

    def sample(self, k: int, seed=0) -> np.ndarray:
        """Draw ``k`` synthetic observations on the scale of the data."""
        u = sample_copula(self._copula, k, seed=seed)
        return np.column_stack([f.ppf(u[:, l]) for l, f in enumerate(self._marginals)])
