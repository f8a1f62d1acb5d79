"""Estimate the joint law of component ranks by sub-sampling.

For an ``n``-sample in ``R^d`` and a sub-sample size ``m``, every size-``m``
subset contributes the ``m`` rank vectors of its observations; the estimate
at ``r`` is the number of (subset, observation) incidences at ``r`` divided
by ``m`` times the number of subsets.
"""
from __future__ import annotations

import itertools
import json
import math
import os
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np  # type: ignore
import pandas  # type: ignore
from joblib import Parallel, delayed  # type: ignore
from scipy.stats import rankdata  # type: ignore

from subrank.errors import EnumerationTooLarge, TiesDetected
from subrank.grid import DENSE_CELL_LIMIT, RankGrid, cell_strides

ENUMERATION_CAP = 10**8

_SUBSAMPLE_STREAM = 0
_TIE_STREAM = 1
_KEY_BUDGET = 2**20
_CHUNK = 2**16


@dataclass(frozen=True)
class SampleMatrix:
    """An ``n x d`` matrix of real observations, one row per observation."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise ValueError(f"sample must be two-dimensional ({values.ndim})")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"sample must have at least one row and column {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("sample contains NaN or infinite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Reject:
    """Refuse samples with repeated values in a column."""


@dataclass(frozen=True)
class RandomBreak:
    """Break ties uniformly at random."""

    seed: int = 0


TiePolicy = Union[Reject, RandomBreak]


@dataclass(frozen=True)
class Exhaustive:
    """Use every size-m subset."""


@dataclass(frozen=True)
class Random:
    """Average ``count`` uniformly drawn size-m subsets."""

    count: int
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"number of sub-samples must be positive ({self.count})")


Strategy = Union[Exhaustive, Random]


def substream(seed, *key: int) -> np.random.SeedSequence:
    """Independent seed sequence for the stream labelled ``key``.

    ``seed`` may be an integer or a :class:`numpy.random.SeedSequence`; the
    stream only depends on ``seed`` and ``key``.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def subsample_count_heuristic(m: int, d: int) -> int:
    """Default number of random sub-samples, ``max(10^5, 30 m^d)``.

    With this many sub-samples a cell of the uniform grid expects at least
    30 hits, where the binomial count is close to normal.

    Examples
    --------
    >>> from subrank.ranks import subsample_count_heuristic
    >>> subsample_count_heuristic(8, 2)
    100000
    >>> subsample_count_heuristic(15, 5)
    22781250
    """
    return max(10**5, 30 * m**d)


class EstimatorConfig:
    """Settings of the rank-grid estimator.

    Parameters
    ----------
    m : int
        Sub-sample size (at least 2).
    strategy : Exhaustive or Random, optional
        How sub-samples are chosen.
    tie_policy : Reject or RandomBreak, optional
        What to do with repeated values in a column.
    enumeration_cap : int, optional
        Largest number of subsets exhaustive enumeration may visit.
    dense_limit : int, optional
        Largest number of cells stored as a dense array.

    Examples
    --------
    >>> from subrank.ranks import EstimatorConfig, Random
    >>> config = EstimatorConfig(8, strategy=Random(1000, seed=1))
    >>> config.m, config.strategy.count
    (8, 1000)
    """

    def __init__(
        self,
        m: int,
        strategy: Strategy = Exhaustive(),
        tie_policy: TiePolicy = Reject(),
        enumeration_cap: int = ENUMERATION_CAP,
        dense_limit: int = DENSE_CELL_LIMIT,
    ):
        self._params: dict = {}

        self.m = m
        self.strategy = strategy
        self.tie_policy = tie_policy
        self.enumeration_cap = enumeration_cap
        self.dense_limit = dense_limit

    @property
    def params(self):
        return tuple(self._params.items())

    @property
    def m(self) -> int:
        return self._params["m"]

    @m.setter
    def m(self, new_val: int):
        if int(new_val) == new_val and new_val >= 2:
            self._params["m"] = int(new_val)
        else:
            raise ValueError("m must be an integer >= 2")

    @property
    def strategy(self) -> Strategy:
        return self._params["strategy"]

    @strategy.setter
    def strategy(self, new_val: Strategy):
        if isinstance(new_val, (Exhaustive, Random)):
            self._params["strategy"] = new_val
        else:
            raise ValueError("strategy must be Exhaustive() or Random(count, seed)")

    @property
    def tie_policy(self) -> TiePolicy:
        return self._params["tie_policy"]

    @tie_policy.setter
    def tie_policy(self, new_val: TiePolicy):
        if isinstance(new_val, (Reject, RandomBreak)):
            self._params["tie_policy"] = new_val
        else:
            raise ValueError("tie_policy must be Reject() or RandomBreak(seed)")

    @property
    def enumeration_cap(self) -> int:
        return self._params["enumeration_cap"]

    @enumeration_cap.setter
    def enumeration_cap(self, new_val: int):
        if new_val >= 1:
            self._params["enumeration_cap"] = int(new_val)
        else:
            raise ValueError("enumeration_cap must be positive")

    @property
    def dense_limit(self) -> int:
        return self._params["dense_limit"]

    @dense_limit.setter
    def dense_limit(self, new_val: int):
        if new_val >= 1:
            self._params["dense_limit"] = int(new_val)
        else:
            raise ValueError("dense_limit must be positive")

    def check_sample(self, sample: SampleMatrix) -> None:
        if self.m > sample.n:
            raise ValueError(f"sub-sample size {self.m} exceeds the sample size {sample.n}")


def component_ranks(sample: SampleMatrix, tie_policy: TiePolicy = Reject()) -> np.ndarray:
    """Componentwise ranks, 1 for the smallest value of each column.

    Examples
    --------
    >>> from subrank.ranks import SampleMatrix, component_ranks
    >>> sample = SampleMatrix([[2.29, -0.97], [-1.2, -0.95], [-0.69, 0.75], [-0.41, -0.12]])
    >>> component_ranks(sample).tolist()
    [[4, 1], [1, 2], [2, 4], [3, 3]]
    """
    values = sample.values

    if isinstance(tie_policy, RandomBreak):
        ranks = np.empty(values.shape, dtype=np.int64)
        for column in range(sample.d):
            rng = np.random.default_rng(substream(tie_policy.seed, _TIE_STREAM, column))
            shuffle = rng.permutation(sample.n)
            order = shuffle[np.argsort(values[shuffle, column], kind="stable")]
            ranks[order, column] = np.arange(1, sample.n + 1)
        return ranks

    for column in range(sample.d):
        sorted_column = np.sort(values[:, column])
        repeated = np.flatnonzero(sorted_column[1:] == sorted_column[:-1])
        if len(repeated):
            raise TiesDetected(column, float(sorted_column[repeated[0]]))
    return rankdata(values, method="ordinal", axis=0).astype(np.int64)


def pseudo_observations(sample: SampleMatrix, tie_policy: TiePolicy = Reject()) -> np.ndarray:
    """Ranks divided by ``n + 1``, strictly inside (0, 1)."""
    return component_ranks(sample, tie_policy) / (sample.n + 1.0)


def _subset_cells(ranks: np.ndarray, subsets: np.ndarray, m: int) -> np.ndarray:
    """Flat grid cells hit by every observation of every subset."""
    block = ranks[subsets]
    local = block.argsort(axis=1).argsort(axis=1)
    return (local.reshape(-1, ranks.shape[1]) @ cell_strides(m, ranks.shape[1])).astype(
        np.int64
    )


def subsample_rank_set(
    sample: SampleMatrix, subset, tie_policy: TiePolicy = Reject()
) -> set[tuple[int, ...]]:
    """Rank vectors of the observations in ``subset`` within that subset.

    Examples
    --------
    >>> from subrank.ranks import SampleMatrix, subsample_rank_set
    >>> sample = SampleMatrix([[2.29, -0.97], [-1.2, -0.95], [-0.69, 0.75], [-0.41, -0.12]])
    >>> sorted(subsample_rank_set(sample, [0, 1, 2]))
    [(1, 2), (2, 3), (3, 1)]
    """
    subset = np.asarray(subset, dtype=np.int64)
    if subset.ndim != 1 or len(np.unique(subset)) != len(subset):
        raise ValueError("subset must list distinct observation indices")
    if len(subset) == 0 or subset.min() < 0 or subset.max() >= sample.n:
        raise ValueError(f"subset indices must lie in [0, {sample.n})")

    ranks = component_ranks(sample, tie_policy)[subset]
    local = ranks.argsort(axis=0).argsort(axis=0) + 1
    return {tuple(int(r) for r in row) for row in local}


class _Tally:
    """Accumulates cell hits, densely or as merged sorted runs."""

    def __init__(self, m: int, d: int, dense_limit: int):
        self.m, self.d = m, d
        self.dense = m**d <= dense_limit
        self.dense_limit = dense_limit
        self._counts = np.zeros(m**d, dtype=np.int64) if self.dense else None
        self._runs: list[tuple[np.ndarray, np.ndarray]] = []

    def add(self, cells: np.ndarray) -> None:
        if self.dense:
            self._counts += np.bincount(cells, minlength=self.m**self.d)
        else:
            self._runs.append(np.unique(cells, return_counts=True))

    def add_counts(self, cells: np.ndarray, counts: np.ndarray) -> None:
        if self.dense:
            np.add.at(self._counts, cells, counts)
        else:
            self._runs.append((cells, counts))

    def counts(self) -> tuple[np.ndarray, np.ndarray]:
        if self.dense:
            cells = np.flatnonzero(self._counts)
            return cells, self._counts[cells]
        if not self._runs:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        cells = np.concatenate([run[0] for run in self._runs])
        counts = np.concatenate([run[1] for run in self._runs])
        unique, inverse = np.unique(cells, return_inverse=True)
        return unique, np.bincount(inverse, weights=counts).astype(np.int64)

    def grid(self, total_draws: int) -> RankGrid:
        cells, counts = self.counts()
        return RankGrid.from_counts(
            self.m, self.d, cells, counts, total_draws, dense_limit=self.dense_limit
        )


def estimate_exhaustive(
    sample: SampleMatrix,
    m: int,
    tie_policy: TiePolicy = Reject(),
    enumeration_cap: int = ENUMERATION_CAP,
    dense_limit: int = DENSE_CELL_LIMIT,
) -> RankGrid:
    """Rank grid averaged over every size-``m`` subset of the sample.

    Parameters
    ----------
    sample : SampleMatrix
        The observations.
    m : int
        Sub-sample size.
    tie_policy : Reject or RandomBreak, optional
        Handling of repeated values.
    enumeration_cap : int, optional
        Refuse to enumerate more than this many subsets.
    dense_limit : int, optional
        Largest grid stored densely.

    Returns
    -------
    RankGrid
        Count-based grid; :meth:`RankGrid.fraction` gives exact weights.

    Examples
    --------
    >>> from subrank.ranks import SampleMatrix, estimate_exhaustive
    >>> sample = SampleMatrix([[2.29, -0.97], [-1.2, -0.95], [-0.69, 0.75], [-0.41, -0.12]])
    >>> grid = estimate_exhaustive(sample, 3)
    >>> grid.fraction((3, 1)), grid.fraction((2, 1)), grid.total_draws
    (Fraction(1, 4), Fraction(0, 1), 4)
    """
    config = EstimatorConfig(
        m, tie_policy=tie_policy, enumeration_cap=enumeration_cap, dense_limit=dense_limit
    )
    config.check_sample(sample)

    n_subsets = math.comb(sample.n, m)
    if n_subsets > enumeration_cap:
        raise EnumerationTooLarge(n_subsets, enumeration_cap)

    ranks = component_ranks(sample, tie_policy)
    tally = _Tally(m, sample.d, dense_limit)
    subsets = itertools.combinations(range(sample.n), m)
    while chunk := list(itertools.islice(subsets, _CHUNK)):
        tally.add(_subset_cells(ranks, np.asarray(chunk, dtype=np.int64), m))

    return tally.grid(n_subsets)


def _block_size(n: int) -> int:
    return max(1, _KEY_BUDGET // n)


def _random_block(ranks: np.ndarray, m: int, seed, block: int, size: int):
    rng = np.random.default_rng(substream(seed, _SUBSAMPLE_STREAM, block))
    keys = rng.random((size, ranks.shape[0]))
    subsets = np.argpartition(keys, m - 1, axis=1)[:, :m]
    return np.unique(_subset_cells(ranks, subsets, m), return_counts=True)


def estimate_random(
    sample: SampleMatrix,
    m: int,
    count: int,
    seed=0,
    tie_policy: TiePolicy = Reject(),
    dense_limit: int = DENSE_CELL_LIMIT,
    n_jobs: int = 1,
) -> RankGrid:
    """Rank grid averaged over ``count`` uniformly drawn size-``m`` subsets.

    Subsets are drawn independently of one another, each one without
    replacement. Sub-samples are processed in fixed blocks whose size only
    depends on ``n``; block ``j`` draws from its own stream derived from
    ``(seed, j)``, so the result does not depend on ``n_jobs``.

    Parameters
    ----------
    sample : SampleMatrix
        The observations.
    m : int
        Sub-sample size.
    count : int
        Number of sub-samples.
    seed : int or SeedSequence, optional
        Seed of the sub-sampling streams.
    tie_policy : Reject or RandomBreak, optional
        Handling of repeated values.
    dense_limit : int, optional
        Largest grid stored densely.
    n_jobs : int, optional
        Number of joblib workers.

    Returns
    -------
    RankGrid
        Count-based grid with ``total_draws == count``.
    """
    config = EstimatorConfig(
        m, strategy=Random(count, 0), tie_policy=tie_policy, dense_limit=dense_limit
    )
    config.check_sample(sample)

    ranks = component_ranks(sample, tie_policy)
    size = _block_size(sample.n)
    blocks = [(j, min(size, count - j * size)) for j in range(-(-count // size))]

    if n_jobs == 1 or len(blocks) == 1:
        runs = [_random_block(ranks, m, seed, j, k) for j, k in blocks]
    else:
        runs = Parallel(n_jobs=n_jobs)(
            delayed(_random_block)(ranks, m, seed, j, k) for j, k in blocks
        )

    tally = _Tally(m, sample.d, dense_limit)
    for cells, counts in runs:
        tally.add_counts(cells, counts)
    return tally.grid(count)


def estimate(sample: SampleMatrix, config: EstimatorConfig, n_jobs: int = 1) -> RankGrid:
    """Rank grid of ``sample`` following ``config``."""
    strategy = config.strategy
    if isinstance(strategy, Random):
        if strategy.count < 30 * config.m**sample.d:
            warnings.warn(
                f"{strategy.count} sub-samples give fewer than 30 expected hits per"
                " cell of the uniform grid",
                stacklevel=2,
            )
        return estimate_random(
            sample,
            config.m,
            strategy.count,
            seed=strategy.seed,
            tie_policy=config.tie_policy,
            dense_limit=config.dense_limit,
            n_jobs=n_jobs,
        )
    return estimate_exhaustive(
        sample,
        config.m,
        tie_policy=config.tie_policy,
        enumeration_cap=config.enumeration_cap,
        dense_limit=config.dense_limit,
    )


def binomial_tolerance(grid: RankGrid, count: int) -> np.ndarray:
    """Standard deviation of each cell of a ``count``-sub-sample estimate.

    The number of sub-samples that hit a cell of weight ``p`` is binomial
    with parameters ``count`` and ``m p``; the returned array is aligned
    with the dense flat cells of ``grid``.
    """
    hit = np.clip(grid.m * grid.to_array().reshape(-1), 0.0, 1.0)
    return np.sqrt(hit * (1.0 - hit) / count) / grid.m


def read_sample(path_or_buffer) -> SampleMatrix:
    """Read a CSV of observations (one row each, optional header)."""
    frame = pandas.read_csv(
        path_or_buffer,
        header=None,
        dtype=str,
        comment="#",
        skip_blank_lines=True,
        keep_default_na=False,
    )
    if len(frame) and _is_header_row(frame.iloc[0]):
        frame = frame.iloc[1:]

    values = frame.apply(lambda column: pandas.to_numeric(column.str.strip(), errors="coerce"))
    if values.isna().to_numpy().any():
        raise ValueError("sample contains empty or non-numeric cells")
    return SampleMatrix(values.to_numpy(dtype=float))


def _is_header_row(row) -> bool:
    """A header has at least one non-empty cell that is not a number."""
    for value in row:
        text = str(value).strip()
        if not text:
            continue
        try:
            float(text)
        except ValueError:
            return True
    return False


def write_grid(grid: RankGrid, path: str | os.PathLike, **metadata) -> None:
    """Write a grid CSV at ``path`` and a JSON sidecar next to it."""
    frame = grid.to_frame()
    if not grid.is_dense:
        frame = frame[frame.weight > 0.0]
    frame.to_csv(path, index=False, float_format="%.17g")

    sidecar = {
        "m": grid.m,
        "d": grid.d,
        "total_draws": grid.total_draws,
        "total_weight": grid.total_weight,
    }
    sidecar.update(metadata)
    with open(f"{os.fspath(path)}.json", "w") as fp:
        json.dump(sidecar, fp, indent=2, sort_keys=True)
