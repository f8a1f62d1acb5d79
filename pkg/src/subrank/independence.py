"""Independence tests on rank grids calibrated by simulation."""
from __future__ import annotations

import enum
import json
import os
import pathlib
import warnings
from dataclasses import dataclass, field

import numpy as np  # type: ignore
from joblib import Parallel, delayed  # type: ignore
from scipy.special import rel_entr  # type: ignore

from subrank.errors import NullHasZeroCell, ShapeMismatch
from subrank.grid import RankGrid
from subrank.null_theory import l2_pmf_distance
from subrank.ranks import SampleMatrix, estimate_random, substream

MIN_SIMULATIONS = 100

_NULL_DATA_STREAM = 3
_NULL_SUBSAMPLE_STREAM = 4
_TEST_SUBSAMPLE_STREAM = 5


class Statistic(enum.Enum):
    KL = "kl"
    L2 = "l2"


def kl_statistic(grid: RankGrid, null_grid: RankGrid) -> float:
    """Kullback-Leibler divergence of ``grid`` from ``null_grid``.

    Cells where ``grid`` is zero contribute nothing.

    Examples
    --------
    >>> import math
    >>> from subrank.independence import kl_statistic
    >>> from subrank.null_theory import comonotone_pmf, independence_pmf
    >>> math.isclose(kl_statistic(comonotone_pmf(8), independence_pmf(8, 2)), math.log(8))
    True
    """
    grid.check_compatible(null_grid)
    cells, p = grid.nonzero()
    q = null_grid.weights_at(cells)
    if np.any(q <= 0.0):
        cell = cells[np.flatnonzero(q <= 0.0)[0]]
        raise NullHasZeroCell(tuple(int(c) for c in grid.rank_vectors([cell])[0]))
    return float(np.sum(rel_entr(p, q)))


def l2_statistic(grid: RankGrid, null_grid: RankGrid) -> float:
    """``m^d`` times the squared distance of ``grid`` to ``null_grid``."""
    return l2_pmf_distance(grid, null_grid)


def statistic_against_independence(grid: RankGrid, statistic: Statistic) -> float:
    """Distance of ``grid`` to the uniform grid without building the latter."""
    cells, p = grid.nonzero()
    uniform = 1.0 / grid.n_cells
    if statistic is Statistic.KL:
        return float(np.sum(rel_entr(p, uniform)))
    empty = grid.n_cells - len(cells)
    return float(grid.n_cells * (np.sum((p - uniform) ** 2) + empty * uniform**2))


@dataclass(frozen=True)
class NullCalibration:
    """Simulated law of a statistic for independent components.

    Parameters
    ----------
    m, d, n, b : int
        Sub-sample size, dimension, sample size and sub-sample count.
    seed : int
        Seed of the simulation.
    statistic : Statistic
        Which statistic was simulated.
    null_draws : ndarray of float
        The simulated statistics, sorted.
    """

    m: int
    d: int
    n: int
    b: int
    seed: int
    statistic: Statistic
    null_draws: np.ndarray = field(repr=False)

    def __post_init__(self):
        draws = np.sort(np.asarray(self.null_draws, dtype=float))
        if len(draws) < MIN_SIMULATIONS:
            raise ValueError(
                f"at least {MIN_SIMULATIONS} null simulations are needed ({len(draws)})"
            )
        object.__setattr__(self, "null_draws", draws)

    @property
    def n_sims(self) -> int:
        return len(self.null_draws)

    @property
    def key(self) -> tuple:
        return (self.m, self.d, self.n, self.b, self.statistic.value, self.seed, self.n_sims)

    def threshold(self, level: float) -> float:
        """Empirical ``1 - level`` quantile of the null draws."""
        if not 0.0 < level < 1.0:
            raise ValueError(f"level must be in (0, 1) ({level})")
        return float(np.quantile(self.null_draws, 1.0 - level, method="higher"))

    def p_value(self, statistic: float) -> float:
        """Add-one Monte Carlo p-value of an observed statistic."""
        exceed = len(self.null_draws) - np.searchsorted(self.null_draws, statistic, side="left")
        return (1.0 + exceed) / (1.0 + self.n_sims)

    def as_dict(self, levels=(0.01, 0.05, 0.1)) -> dict:
        return {
            "m": self.m,
            "d": self.d,
            "n": self.n,
            "b": self.b,
            "seed": self.seed,
            "statistic": self.statistic.value,
            "n_sims": self.n_sims,
            "thresholds": {str(level): self.threshold(level) for level in levels},
            "null_draws": self.null_draws.tolist(),
        }

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fp:
            json.dump(self.as_dict(), fp, indent=2)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "NullCalibration":
        with open(path) as fp:
            data = json.load(fp)
        return cls(
            m=data["m"],
            d=data["d"],
            n=data["n"],
            b=data["b"],
            seed=data["seed"],
            statistic=Statistic(data["statistic"]),
            null_draws=np.asarray(data["null_draws"], dtype=float),
        )


def _null_replication(
    m: int, d: int, n: int, b: int, seed: int, statistic: Statistic, index: int
) -> float:
    rng = np.random.default_rng(substream(seed, _NULL_DATA_STREAM, index))
    sample = SampleMatrix(rng.standard_normal((n, d)))
    grid = estimate_random(sample, m, b, seed=substream(seed, _NULL_SUBSAMPLE_STREAM, index))
    return statistic_against_independence(grid, statistic)


def calibrate_null(
    m: int,
    d: int,
    n: int,
    b: int,
    n_sims: int = 1000,
    seed: int = 0,
    statistic: Statistic = Statistic.KL,
    n_jobs: int = 1,
) -> NullCalibration:
    """Simulate the statistic on independent standard Gaussian samples.

    Replication ``i`` draws its data and its sub-samples from streams derived
    from ``(seed, i)``, so the calibration does not depend on ``n_jobs``.

    Parameters
    ----------
    m : int
        Sub-sample size.
    d : int
        Dimension.
    n : int
        Sample size.
    b : int
        Number of random sub-samples per replication.
    n_sims : int, optional
        Number of replications.
    seed : int, optional
        Seed of the simulation.
    statistic : Statistic, optional
        Statistic to simulate.
    n_jobs : int, optional
        Number of joblib workers.

    Returns
    -------
    NullCalibration
        The sorted simulated statistics.
    """
    if n < m:
        raise ValueError(f"sample size {n} is smaller than the sub-sample size {m}")
    if b < 1:
        raise ValueError(f"number of sub-samples must be positive ({b})")
    if n_sims < MIN_SIMULATIONS:
        raise ValueError(f"at least {MIN_SIMULATIONS} null simulations are needed ({n_sims})")

    if n_jobs == 1:
        draws = [_null_replication(m, d, n, b, seed, statistic, i) for i in range(n_sims)]
    else:
        draws = Parallel(n_jobs=n_jobs)(
            delayed(_null_replication)(m, d, n, b, seed, statistic, i) for i in range(n_sims)
        )

    return NullCalibration(
        m=m, d=d, n=n, b=b, seed=seed, statistic=statistic, null_draws=np.asarray(draws)
    )


def calibration_path(
    cache_dir: str | os.PathLike,
    m: int,
    d: int,
    n: int,
    b: int,
    statistic: Statistic,
    seed: int,
    n_sims: int,
) -> pathlib.Path:
    name = f"null-m{m}-d{d}-n{n}-b{b}-{statistic.value}-seed{seed}-sims{n_sims}.json"
    return pathlib.Path(cache_dir) / name


def load_or_calibrate(
    cache_dir: str | os.PathLike | None,
    m: int,
    d: int,
    n: int,
    b: int,
    n_sims: int = 1000,
    seed: int = 0,
    statistic: Statistic = Statistic.KL,
    n_jobs: int = 1,
) -> NullCalibration:
    """Calibration read from ``cache_dir`` if present, otherwise simulated and stored."""
    if cache_dir is None:
        return calibrate_null(m, d, n, b, n_sims, seed, statistic, n_jobs=n_jobs)

    path = calibration_path(cache_dir, m, d, n, b, statistic, seed, n_sims)
    if path.is_file():
        return NullCalibration.load(path)

    calibration = calibrate_null(m, d, n, b, n_sims, seed, statistic, n_jobs=n_jobs)
    path.parent.mkdir(parents=True, exist_ok=True)
    calibration.save(path)
    return calibration


@dataclass(frozen=True)
class TestResult:
    """Outcome of an independence test."""

    __test__ = False

    statistic: float
    p_value: float
    threshold: float
    level: float
    reject: bool
    calibration: dict

    def as_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "threshold": self.threshold,
            "level": self.level,
            "reject": self.reject,
            "calibration": self.calibration,
        }


def evaluate_grid(grid: RankGrid, calibration: NullCalibration, level: float = 0.05) -> TestResult:
    """Test an already estimated grid against a calibration."""
    if grid.shape != (calibration.m, calibration.d):
        raise ShapeMismatch(
            f"grid shape {grid.shape} does not match the calibration"
            f" {(calibration.m, calibration.d)}"
        )
    statistic = statistic_against_independence(grid, calibration.statistic)
    threshold = calibration.threshold(level)
    return TestResult(
        statistic=statistic,
        p_value=calibration.p_value(statistic),
        threshold=threshold,
        level=level,
        reject=statistic > threshold,
        calibration={
            key: value
            for key, value in calibration.as_dict(levels=(level,)).items()
            if key != "null_draws"
        },
    )


def independence_test(
    sample: SampleMatrix,
    calibration: NullCalibration,
    level: float = 0.05,
    seed=None,
    n_jobs: int = 1,
) -> TestResult:
    """Test a sample for independence of its components.

    The rank grid of ``sample`` is estimated with the calibration's ``m`` and
    ``b`` and compared with the calibration's ``1 - level`` quantile.

    Parameters
    ----------
    sample : SampleMatrix
        Observations to test.
    calibration : NullCalibration
        Simulated null law for samples of the same shape.
    level : float, optional
        Level of the test.
    seed : int or SeedSequence, optional
        Seed of the sub-sampling (derived from the calibration seed by
        default).
    n_jobs : int, optional
        Number of joblib workers.

    Returns
    -------
    TestResult
        Statistic, p-value and decision.
    """
    if (sample.n, sample.d) != (calibration.n, calibration.d):
        raise ShapeMismatch(
            f"sample shape {(sample.n, sample.d)} does not match the calibration"
            f" {(calibration.n, calibration.d)}"
        )
    if seed is None:
        seed = substream(calibration.seed, _TEST_SUBSAMPLE_STREAM)
    if calibration.n_sims < 1.0 / level:
        warnings.warn(
            f"{calibration.n_sims} null simulations cannot resolve the level {level}",
            stacklevel=2,
        )

    grid = estimate_random(sample, calibration.m, calibration.b, seed=seed, n_jobs=n_jobs)
    return evaluate_grid(grid, calibration, level)
