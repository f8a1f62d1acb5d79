"""Weights over the rank vectors of an m-sub-sample."""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from fractions import Fraction

import numpy as np  # type: ignore
import pandas  # type: ignore

from subrank.errors import GridTooLarge, ShapeMismatch

DENSE_CELL_LIMIT = 2**24


def cell_strides(m: int, d: int) -> np.ndarray:
    """Strides that map zero-based rank vectors to flat (C-order) cell indices.

    Examples
    --------
    >>> from subrank.grid import cell_strides
    >>> cell_strides(3, 2).tolist()
    [3, 1]
    """
    return np.asarray([m ** (d - 1 - axis) for axis in range(d)], dtype=np.int64)


class RankGrid:
    """Nonnegative weights on ``{1..m}^d``.

    Grids with at most ``dense_limit`` cells keep a dense flat array; larger
    grids keep sorted flat cell indices together with their weights. Grids
    built from sub-sample tallies also keep the integer counts so that
    weights can be recovered as exact fractions of ``m * total_draws``.

    Parameters
    ----------
    m : int
        Sub-sample size (ranks run from 1 to ``m``).
    d : int
        Dimension.
    cells : ndarray of int, optional
        Sorted, unique flat cell indices (sparse storage).
    values : ndarray of float
        Dense flat weights of length ``m**d``, or the weights of ``cells``.
    counts : ndarray of int, optional
        Integer tallies aligned with ``values``.
    total_draws : int, optional
        Number of sub-samples behind ``counts``.
    """

    def __init__(
        self,
        m: int,
        d: int,
        values: np.ndarray,
        cells: np.ndarray | None = None,
        counts: np.ndarray | None = None,
        total_draws: int = 0,
    ):
        if m < 1 or d < 1:
            raise ValueError(f"grid shape must be positive (m={m}, d={d})")

        self._m = int(m)
        self._d = int(d)
        self._values = np.asarray(values, dtype=float)
        self._cells = None if cells is None else np.asarray(cells, dtype=np.int64)
        self._counts = None if counts is None else np.asarray(counts, dtype=np.int64)
        self._total_draws = int(total_draws)

        if self._cells is None and self._values.shape != (self.n_cells,):
            raise ShapeMismatch(
                f"dense weights must have {self.n_cells} entries ({self._values.shape})"
            )
        if self._cells is not None and self._cells.shape != self._values.shape:
            raise ShapeMismatch("cells and values must have the same length")
        if np.any(self._values < 0.0):
            raise ValueError("grid weights must be nonnegative")

    @classmethod
    def from_counts(
        cls,
        m: int,
        d: int,
        cells: np.ndarray,
        counts: np.ndarray,
        total_draws: int,
        dense_limit: int = DENSE_CELL_LIMIT,
    ) -> "RankGrid":
        """Grid of ``counts / (m * total_draws)`` at the (unique) ``cells``."""
        if total_draws < 1:
            raise ValueError(f"total_draws must be positive ({total_draws})")

        cells = np.asarray(cells, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)

        norm = m * total_draws
        n_cells = m**d
        if n_cells <= dense_limit:
            dense = np.zeros(n_cells, dtype=np.int64)
            np.add.at(dense, cells, counts)
            return cls(m, d, dense / norm, counts=dense, total_draws=total_draws)

        cells, inverse = np.unique(cells, return_inverse=True)
        counts = np.bincount(inverse, weights=counts).astype(np.int64)
        keep = counts > 0
        cells, counts = cells[keep], counts[keep]
        return cls(
            m, d, counts / norm, cells=cells, counts=counts, total_draws=total_draws
        )

    @classmethod
    def from_array(cls, weights) -> "RankGrid":
        """Dense grid from a d-dimensional ``(m, ..., m)`` array of weights.

        Axis ``l`` of ``weights`` holds rank ``r_l - 1``.
        """
        weights = np.asarray(weights, dtype=float)
        m = weights.shape[0]
        if any(size != m for size in weights.shape):
            raise ShapeMismatch(f"weights must have equal axes ({weights.shape})")
        return cls(m, weights.ndim, weights.reshape(-1))

    @classmethod
    def from_mapping(cls, m: int, d: int, weights: dict, dense_limit: int = DENSE_CELL_LIMIT):
        """Grid from a mapping of rank vectors to weights."""
        ranks = np.asarray(list(weights.keys()), dtype=np.int64).reshape(-1, d)
        values = np.asarray(list(weights.values()), dtype=float)
        cells = (ranks - 1) @ cell_strides(m, d)
        if m**d <= dense_limit:
            dense = np.zeros(m**d)
            np.add.at(dense, cells, values)
            return cls(m, d, dense)
        unique, inverse = np.unique(cells, return_inverse=True)
        return cls(m, d, np.bincount(inverse, weights=values), cells=unique)

    @property
    def m(self) -> int:
        return self._m

    @property
    def d(self) -> int:
        return self._d

    @property
    def shape(self) -> tuple[int, int]:
        return (self._m, self._d)

    @property
    def n_cells(self) -> int:
        return self._m**self._d

    @property
    def is_dense(self) -> bool:
        return self._cells is None

    @property
    def total_draws(self) -> int:
        return self._total_draws

    @property
    def has_counts(self) -> bool:
        return self._counts is not None

    @property
    def total_weight(self) -> float:
        return float(np.sum(self._values))

    def check_compatible(self, other: "RankGrid") -> None:
        if self.shape != other.shape:
            raise ShapeMismatch(
                f"grids have different shapes (m, d): {self.shape} != {other.shape}"
            )

    def nonzero(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat indices and weights of the cells with positive weight."""
        if self.is_dense:
            cells = np.flatnonzero(self._values)
            return cells.astype(np.int64), self._values[cells]
        keep = self._values > 0.0
        return self._cells[keep], self._values[keep]

    def nonzero_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat indices and integer tallies of the occupied cells."""
        if self._counts is None:
            raise ValueError("grid was not built from sub-sample counts")
        if self.is_dense:
            cells = np.flatnonzero(self._counts)
            return cells.astype(np.int64), self._counts[cells]
        return self._cells, self._counts

    def weights_at(self, cells) -> np.ndarray:
        """Weights at flat cell indices (zero where nothing is stored)."""
        cells = np.asarray(cells, dtype=np.int64)
        if self.is_dense:
            return self._values[cells]

        if len(self._cells) == 0:
            return np.zeros(cells.shape)
        pos = np.minimum(np.searchsorted(self._cells, cells), len(self._cells) - 1)
        return np.where(self._cells[pos] == cells, self._values[pos], 0.0)

    def cells_of(self, ranks) -> np.ndarray:
        """Flat cell indices of one-based rank vectors (shape ``(k, d)``)."""
        ranks = np.asarray(ranks, dtype=np.int64).reshape(-1, self._d)
        if np.any((ranks < 1) | (ranks > self._m)):
            raise ValueError(f"rank components must lie in [1, {self._m}]")
        return (ranks - 1) @ cell_strides(self._m, self._d)

    def rank_vectors(self, cells) -> np.ndarray:
        """One-based rank vectors (shape ``(k, d)``) of flat cell indices."""
        cells = np.asarray(cells, dtype=np.int64)
        return np.stack(np.unravel_index(cells, (self._m,) * self._d), axis=-1) + 1

    def weight(self, rank: Sequence[int]) -> float:
        """Weight of a single rank vector.

        Examples
        --------
        >>> from subrank.grid import RankGrid
        >>> grid = RankGrid.from_array([[0.5, 0.0], [0.0, 0.5]])
        >>> grid.weight((1, 1)), grid.weight((1, 2))
        (0.5, 0.0)
        """
        if len(rank) != self._d:
            raise ShapeMismatch(f"rank vector must have {self._d} components")
        return float(self.weights_at(self.cells_of(rank))[0])

    def fraction(self, rank: Sequence[int]) -> Fraction:
        """Exact weight of a rank vector for a count-based grid."""
        if self._counts is None:
            raise ValueError("exact weights need a grid built from sub-sample counts")
        cell = self.cells_of(rank)[0]
        if self.is_dense:
            count = int(self._counts[cell])
        else:
            pos = np.searchsorted(self._cells, cell)
            found = pos < len(self._cells) and self._cells[pos] == cell
            count = int(self._counts[pos]) if found else 0
        return Fraction(count, self._m * self._total_draws)

    def to_array(self, dense_limit: int = DENSE_CELL_LIMIT) -> np.ndarray:
        """The weights as a d-dimensional ``(m, ..., m)`` array."""
        if self.n_cells > dense_limit:
            raise GridTooLarge(self.n_cells, dense_limit)
        if self.is_dense:
            flat = self._values
        else:
            flat = np.zeros(self.n_cells)
            flat[self._cells] = self._values
        return flat.reshape((self._m,) * self._d).copy()

    def to_frame(self) -> pandas.DataFrame:
        """Table with columns ``r_1, ..., r_d, weight``.

        Dense grids list every cell, sparse grids only their stored cells.
        """
        if self.is_dense:
            cells = np.arange(self.n_cells, dtype=np.int64)
            values = self._values
        else:
            cells, values = self._cells, self._values
        ranks = self.rank_vectors(cells)
        frame = pandas.DataFrame(
            {f"r_{axis + 1}": ranks[:, axis] for axis in range(self._d)}
        )
        frame["weight"] = values
        return frame

    def __repr__(self) -> str:
        storage = "dense" if self.is_dense else "sparse"
        return (
            f"RankGrid(m={self._m}, d={self._d}, {storage},"
            f" total_draws={self._total_draws})"
        )


def merge_grids(grids: Iterable[RankGrid], dense_limit: int = DENSE_CELL_LIMIT) -> RankGrid:
    """Draw-count-weighted average of grids of the same shape.

    Grids that all carry counts are merged exactly by adding their tallies;
    otherwise weights are averaged with the draw counts as weights (equal
    weights when no grid records draws).

    Examples
    --------
    >>> from subrank.grid import RankGrid, merge_grids
    >>> grid = RankGrid.from_array([[0.5, 0.0], [0.0, 0.5]])
    >>> merge_grids([grid, grid]).weight((2, 2))
    0.5
    """
    grids = list(grids)
    if not grids:
        raise ValueError("nothing to merge")
    first = grids[0]
    for grid in grids[1:]:
        first.check_compatible(grid)
    m, d = first.shape

    if all(grid.has_counts for grid in grids):
        cells, counts = zip(*(grid.nonzero_counts() for grid in grids))
        unique, inverse = np.unique(np.concatenate(cells), return_inverse=True)
        merged = np.bincount(inverse, weights=np.concatenate(counts)).astype(np.int64)
        return RankGrid.from_counts(
            m,
            d,
            unique,
            merged,
            sum(grid.total_draws for grid in grids),
            dense_limit=dense_limit,
        )

    draws = np.asarray([grid.total_draws for grid in grids], dtype=float)
    if np.all(draws == 0):
        draws = np.ones(len(grids))
    elif np.any(draws == 0):
        raise ValueError("cannot weight grids without a draw count against grids with one")
    share = draws / draws.sum()

    cells, values = zip(*(grid.nonzero() for grid in grids))
    scaled = [value * s for value, s in zip(values, share)]
    unique, inverse = np.unique(np.concatenate(cells), return_inverse=True)
    merged = np.bincount(inverse, weights=np.concatenate(scaled))
    total = int(draws.sum()) if np.any([grid.total_draws for grid in grids]) else 0

    if m**d <= dense_limit:
        dense = np.zeros(m**d)
        dense[unique] = merged
        return RankGrid(m, d, dense, total_draws=total)
    return RankGrid(m, d, merged, cells=unique, total_draws=total)
