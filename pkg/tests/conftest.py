from fractions import Fraction

import numpy as np  # type: ignore
from pytest import fixture  # type: ignore

from subrank.grid import RankGrid
from subrank.ranks import SampleMatrix

FOUR_POINTS = [[2.29, -0.97], [-1.2, -0.95], [-0.69, 0.75], [-0.41, -0.12]]

FOUR_POINT_GRID = {
    (1, 1): Fraction(1, 12),
    (2, 1): Fraction(0),
    (3, 1): Fraction(3, 12),
    (1, 2): Fraction(2, 12),
    (2, 2): Fraction(1, 12),
    (3, 2): Fraction(1, 12),
    (1, 3): Fraction(1, 12),
    (2, 3): Fraction(3, 12),
    (3, 3): Fraction(0),
}


@fixture()
def four_points():
    return SampleMatrix(FOUR_POINTS)


@fixture()
def four_point_grid():
    return RankGrid.from_mapping(3, 2, {rank: float(p) for rank, p in FOUR_POINT_GRID.items()})


@fixture()
def gaussian_sample():
    return SampleMatrix(np.random.default_rng(1945).standard_normal((50, 2)))
