"""Unit tests for the calibrated independence tests."""
import math

import numpy as np  # type: ignore
from pytest import approx, fixture, mark, raises, warns  # type: ignore

from subrank.errors import NullHasZeroCell, ShapeMismatch
from subrank.generators import GeneratorSpec, Polynomial, generate
from subrank.grid import RankGrid
from subrank.independence import (
    NullCalibration,
    Statistic,
    calibrate_null,
    calibration_path,
    evaluate_grid,
    independence_test,
    kl_statistic,
    l2_statistic,
    load_or_calibrate,
    statistic_against_independence,
)
from subrank.null_theory import comonotone_pmf, independence_pmf
from subrank.ranks import SampleMatrix, estimate_exhaustive


@fixture(scope="module")
def calibration():
    return calibrate_null(4, 2, 12, 200, n_sims=100, seed=3)


def test_kl_uniform_is_zero():
    uniform = independence_pmf(5, 3)
    assert kl_statistic(uniform, uniform) == approx(0.0)


@mark.parametrize("m", (2, 8, 15))
def test_kl_comonotone(m):
    value = kl_statistic(comonotone_pmf(m), independence_pmf(m, 2))
    assert value == approx(math.log(m), abs=1e-12)


def test_kl_four_point_grid(four_point_grid):
    assert kl_statistic(four_point_grid, independence_pmf(3, 2)) == approx(0.377149, abs=1e-6)


def test_kl_null_zero_cell():
    with raises(NullHasZeroCell) as excinfo:
        kl_statistic(independence_pmf(3, 2), comonotone_pmf(3))
    assert excinfo.value.cell == (1, 2)


def test_kl_shape_mismatch():
    with raises(ShapeMismatch):
        kl_statistic(comonotone_pmf(3), independence_pmf(4, 2))


def test_l2_statistic(four_point_grid):
    uniform = independence_pmf(3, 2)
    assert l2_statistic(uniform, uniform) == 0.0
    assert l2_statistic(comonotone_pmf(3), uniform) == approx(2.0)
    assert l2_statistic(four_point_grid, uniform) == approx(5 / 8)


@mark.parametrize("m", (2, 8, 15))
def test_l2_comonotone(m):
    value = l2_statistic(comonotone_pmf(m), independence_pmf(m, 2))
    assert value == approx(m - 1.0, abs=1e-12)
    for statistic, expected in ((Statistic.KL, math.log(m)), (Statistic.L2, m - 1.0)):
        assert statistic_against_independence(comonotone_pmf(m), statistic) == approx(
            expected, abs=1e-12
        )


@mark.parametrize("statistic", (Statistic.KL, Statistic.L2))
def test_against_independence_matches_explicit(four_point_grid, statistic):
    explicit = {Statistic.KL: kl_statistic, Statistic.L2: l2_statistic}[statistic]
    expected = explicit(four_point_grid, independence_pmf(3, 2))
    assert statistic_against_independence(four_point_grid, statistic) == approx(expected)


def test_against_independence_sparse():
    grid = RankGrid(10, 3, np.array([0.5, 0.5]), cells=np.array([0, 999]))
    expected = l2_statistic(RankGrid(10, 3, grid.to_array().reshape(-1)), independence_pmf(10, 3))
    assert statistic_against_independence(grid, Statistic.L2) == approx(expected)


def test_statistics_are_rank_invariant(gaussian_sample):
    sample = SampleMatrix(gaussian_sample.values[:10])
    transformed = SampleMatrix(np.column_stack([np.exp(sample.values[:, 0]), sample.values[:, 1]]))
    grid = estimate_exhaustive(sample, 4)
    other = estimate_exhaustive(transformed, 4)

    for statistic in Statistic:
        assert statistic_against_independence(grid, statistic) == statistic_against_independence(
            other, statistic
        )


def test_calibration_is_seeded(calibration):
    again = calibrate_null(4, 2, 12, 200, n_sims=100, seed=3)
    assert np.array_equal(again.null_draws, calibration.null_draws)
    assert calibration.n_sims == 100
    assert np.all(np.diff(calibration.null_draws) >= 0.0)


def test_calibration_independent_of_workers(calibration):
    parallel = calibrate_null(4, 2, 12, 200, n_sims=100, seed=3, n_jobs=2)
    assert np.array_equal(parallel.null_draws, calibration.null_draws)


def test_threshold_exceedance(calibration):
    threshold = calibration.threshold(0.05)
    assert np.mean(calibration.null_draws > threshold) <= 0.05
    assert np.mean(calibration.null_draws >= threshold) >= 0.05


@mark.parametrize("level", (0.0, 1.0, -0.1))
def test_threshold_invalid_level(calibration, level):
    with raises(ValueError):
        calibration.threshold(level)


def test_p_value(calibration):
    assert calibration.p_value(-1.0) == approx(1.0)
    assert calibration.p_value(np.inf) == approx(1.0 / 101.0)


@mark.parametrize(
    "kwds",
    ({"n": 3}, {"b": 0}, {"n_sims": 99}),
)
def test_calibrate_invalid(kwds):
    params = {"m": 4, "d": 2, "n": 12, "b": 10, "n_sims": 100}
    params.update(kwds)
    with raises(ValueError):
        calibrate_null(**params)


def test_calibration_needs_draws():
    with raises(ValueError):
        NullCalibration(4, 2, 12, 10, 0, Statistic.KL, np.zeros(10))


def test_save_and_load(tmpdir, calibration):
    path = tmpdir / "null.json"
    calibration.save(path)
    loaded = NullCalibration.load(path)

    assert loaded.key == calibration.key
    assert np.array_equal(loaded.null_draws, calibration.null_draws)


def test_load_or_calibrate_caches(tmpdir):
    first = load_or_calibrate(tmpdir, 3, 2, 8, 50, n_sims=100, seed=1)
    path = calibration_path(tmpdir, 3, 2, 8, 50, Statistic.KL, 1, 100)
    assert path.is_file()

    second = load_or_calibrate(tmpdir, 3, 2, 8, 50, n_sims=100, seed=1)
    assert np.array_equal(first.null_draws, second.null_draws)


def test_test_below_every_draw(calibration):
    result = evaluate_grid(independence_pmf(4, 2), calibration, level=0.05)
    assert result.statistic == approx(0.0)
    assert result.p_value == approx(1.0)
    assert not result.reject


def test_test_strong_dependence(calibration):
    x = np.random.default_rng(0).standard_normal(12)
    sample = SampleMatrix(np.column_stack([x, np.exp(x)]))
    result = independence_test(sample, calibration, level=0.05)

    assert result.reject
    assert result.p_value == approx(1.0 / 101.0)
    assert result.as_dict()["calibration"]["n_sims"] == 100
    assert "null_draws" not in result.as_dict()["calibration"]


def test_test_shape_mismatch(calibration, four_points):
    with raises(ShapeMismatch):
        independence_test(four_points, calibration)
    with raises(ShapeMismatch):
        evaluate_grid(independence_pmf(3, 2), calibration)


def test_test_warns_on_coarse_calibration(calibration):
    sample = SampleMatrix(np.random.default_rng(1).standard_normal((12, 2)))
    with warns(UserWarning):
        independence_test(sample, calibration, level=0.001)


@fixture(scope="module")
def level_calibration():
    return calibrate_null(8, 2, 30, 10**4, n_sims=1000, seed=5, n_jobs=-1)


@mark.slow
@mark.parametrize("level", (0.01, 0.05, 0.10))
def test_level_is_calibrated(level_calibration, level):
    rng = np.random.default_rng(2024)
    rejects = [
        independence_test(
            SampleMatrix(rng.standard_normal((30, 2))), level_calibration, level=level, seed=i
        ).reject
        for i in range(1000)
    ]
    tolerance = 4.0 * math.sqrt(2.0 * level * (1.0 - level) / 1000)
    assert np.mean(rejects) == approx(level, abs=tolerance)


@mark.slow
@mark.parametrize("p,d,n,power", ((1, 2, 30, 0.54), (2, 2, 30, 0.44), (2, 3, 45, 0.41)))
def test_power_against_polynomial_dependence(p, d, n, power):
    calibration = calibrate_null(8, d, n, 10**5, n_sims=1000, seed=7, n_jobs=-1)
    rejects = []
    for i in range(300):
        sample = generate(GeneratorSpec(Polynomial(p=p, coef=0.5), n=n, d=d, seed=i))
        rejects.append(independence_test(sample, calibration, level=0.05, seed=i).reject)
    assert np.mean(rejects) == approx(power, abs=0.1)


@fixture(scope="module")
def calibration_d3():
    return calibrate_null(4, 3, 12, 300, n_sims=100, seed=9)


@mark.parametrize("order", ((0, 2, 1), (2, 0, 1), (1, 2, 0)))
def test_dependent_pair_can_be_moved(calibration_d3, order):
    for seed in range(10):
        sample = generate(GeneratorSpec(Polynomial(p=2, coef=0.5), n=12, d=3, seed=seed))
        moved = SampleMatrix(sample.values[:, order])

        grid = estimate_exhaustive(sample, 4)
        moved_grid = estimate_exhaustive(moved, 4)
        assert np.array_equal(moved_grid.to_array(), np.transpose(grid.to_array(), order))
        for statistic in Statistic:
            assert statistic_against_independence(moved_grid, statistic) == approx(
                statistic_against_independence(grid, statistic), rel=1e-12
            )

        result = independence_test(sample, calibration_d3, level=0.1, seed=seed)
        moved_result = independence_test(moved, calibration_d3, level=0.1, seed=seed)
        assert moved_result.statistic == approx(result.statistic, rel=1e-12)
        assert moved_result.p_value == result.p_value
        assert moved_result.reject == result.reject
