"""Unit tests for Bernstein smoothing and the joint density model."""
import numpy as np  # type: ignore
from pytest import approx, fixture, mark, raises  # type: ignore
from scipy import integrate  # type: ignore
from scipy.stats import kstest, norm  # type: ignore

from subrank.cli import load_config
from subrank.errors import DegenerateSlice, ZeroVarianceColumn
from subrank.generators import GeneratorSpec, IndependentGaussian, SphereNoise, generate
from subrank.grid import RankGrid
from subrank.null_theory import comonotone_pmf, independence_pmf
from subrank.ranks import EstimatorConfig, Random, SampleMatrix, pseudo_observations
from subrank.smoother import (
    JointDensityModel,
    MarginalModel,
    SmoothedCopula,
    fit_marginals,
    sample_copula,
    silverman_bandwidth,
    smooth,
)


@fixture(scope="module")
def independent_model():
    sample = generate(GeneratorSpec(IndependentGaussian(), n=200, d=2, seed=11))
    return JointDensityModel(smooth(independence_pmf(6, 2)), fit_marginals(sample))


def test_uniform_grid_is_flat():
    copula = smooth(independence_pmf(5, 3))
    points = np.random.default_rng(0).random((50, 3))
    assert copula.density(points) == approx(np.ones(50))


def test_comonotone_density():
    copula = smooth(comonotone_pmf(2))
    for x, y in ((0.0, 0.0), (0.3, 0.6), (1.0, 0.2)):
        expected = 2.0 * ((1 - x) * (1 - y) + x * y)
        assert copula.density([[x, y]])[0] == approx(expected)


def test_density_integrates_to_one(four_point_grid):
    copula = smooth(four_point_grid)
    value, _ = integrate.dblquad(
        lambda y, x: copula.density([[x, y]])[0], 0.0, 1.0, 0.0, 1.0, epsabs=1e-10
    )
    assert value == approx(1.0, abs=1e-8)


def test_density_chunks_cells():
    grid = RankGrid(20, 3, np.full(8000, 1 / 8000))
    points = np.random.default_rng(1).random((5, 3))
    assert smooth(grid).density(points) == approx(np.ones(5))


def test_density_domain(four_point_grid):
    with raises(ValueError):
        smooth(four_point_grid).density([[0.5, 1.5]])


def test_smooth_needs_unit_weight():
    with raises(ValueError):
        smooth(RankGrid.from_array(np.eye(3)))


def test_log_likelihood(four_point_grid):
    copula = SmoothedCopula(four_point_grid)
    u = np.array([[0.2, 0.3], [0.7, 0.1]])
    assert copula.log_likelihood(u) == approx(np.sum(np.log(copula.density(u))))


def test_marginal_mean(four_point_grid):
    copula = smooth(four_point_grid)
    assert copula.marginal_mean(0) == approx(0.5)
    with raises(ValueError):
        copula.marginal_mean(2)


def test_sample_uniform_grid():
    points = sample_copula(smooth(independence_pmf(4, 2)), 10**4, seed=3)
    assert points.shape == (10**4, 2)
    for axis in range(2):
        assert kstest(points[:, axis], "uniform").statistic < 0.02


def test_sample_comonotone_grid():
    points = sample_copula(smooth(comonotone_pmf(8)), 10**4, seed=4)
    assert np.corrcoef(points, rowvar=False)[0, 1] > 0.5


def test_sample_mean(four_point_grid):
    copula = smooth(four_point_grid)
    k = 10**4
    points = sample_copula(copula, k, seed=5)
    for axis in range(2):
        assert abs(points[:, axis].mean() - copula.marginal_mean(axis)) < 4.0 / np.sqrt(k)


def test_sample_is_seeded(four_point_grid):
    copula = smooth(four_point_grid)
    assert np.array_equal(sample_copula(copula, 10, seed=1), sample_copula(copula, 10, seed=1))
    with raises(ValueError):
        sample_copula(copula, 0)


def test_two_point_marginal():
    model = MarginalModel.fit([0.0, 1.0])
    assert model.cdf([0.5])[0] == approx(0.5)
    assert model.pdf([0.2])[0] == approx(model.pdf([0.8])[0])


def test_marginal_ppf_inverts_cdf():
    model = MarginalModel.fit(np.random.default_rng(6).standard_normal(300))
    x = np.linspace(-1.5, 1.5, 7)
    assert model.ppf(model.cdf(x)) == approx(x, abs=1e-3)


def test_marginal_zero_variance():
    with raises(ZeroVarianceColumn):
        MarginalModel.fit([1.0, 1.0, 1.0], column_index=2)


def test_marginal_needs_two_points():
    with raises(ValueError):
        MarginalModel.fit([1.0])


@mark.slow
def test_kde_is_consistent():
    model = MarginalModel.fit(np.random.default_rng(7).standard_normal(10**5))
    x = np.linspace(-3.0, 3.0, 61)
    assert np.max(np.abs(model.pdf(x) - norm.pdf(x))) < 0.02


def test_silverman_bandwidth():
    column = np.random.default_rng(8).standard_normal(100)
    column = (column - column.mean()) / column.std(ddof=1)
    assert silverman_bandwidth(column) == approx(1.06 * 100**-0.2)
    assert silverman_bandwidth(column) == approx(0.422, abs=1e-3)
    assert MarginalModel.fit(column).bandwidth == approx(silverman_bandwidth(column))


def test_fit_marginals(gaussian_sample):
    marginals = fit_marginals(gaussian_sample)
    assert len(marginals) == 2
    with raises(ValueError):
        fit_marginals(SampleMatrix([[1.0, 2.0]]))


def test_independent_model_factorizes(independent_model):
    points = np.random.default_rng(9).standard_normal((20, 2))
    f0, f1 = independent_model.marginals
    expected = f0.pdf(points[:, 0]) * f1.pdf(points[:, 1])
    assert independent_model.density(points) == approx(expected)
    assert np.all(independent_model.density(points) >= 0.0)


def test_joint_density_integrates_to_one(independent_model):
    value, _ = integrate.dblquad(
        lambda y, x: independent_model.density([[x, y]])[0], -6.0, 6.0, -6.0, 6.0, epsabs=1e-6
    )
    assert value == approx(1.0, abs=0.02)


def test_marginals_must_match_dimension(gaussian_sample):
    with raises(ValueError):
        JointDensityModel(smooth(independence_pmf(3, 3)), fit_marginals(gaussian_sample))


def test_fit(gaussian_sample):
    model = JointDensityModel.fit(gaussian_sample, EstimatorConfig(4))
    assert model.d == 2
    assert model.copula.grid.total_draws > 0
    assert np.isfinite(model.copula_log_likelihood(gaussian_sample))


def test_independent_slice_is_product():
    sample = generate(GeneratorSpec(IndependentGaussian(), n=200, d=3, seed=12))
    model = JointDensityModel(smooth(independence_pmf(5, 3)), fit_marginals(sample))
    x = np.linspace(-2.0, 2.0, 9)
    y = np.linspace(-2.5, 2.5, 11)

    values = model.conditional_slice({2: 0.7}, x, y)
    f0, f1 = model.marginals[0], model.marginals[1]
    expected = f0.pdf(x)[:, None] * f1.pdf(y)[None, :]

    assert values.shape == (9, 11)
    assert values.sum() == approx(1.0)
    assert values == approx(expected / expected.sum())


def test_slice_needs_two_free_axes(independent_model):
    with raises(ValueError):
        independent_model.conditional_slice({0: 0.0}, [0.0], [0.0])
    with raises(ValueError):
        independent_model.conditional_slice({}, [0.0], [np.inf])


def test_degenerate_slice():
    sample = generate(GeneratorSpec(IndependentGaussian(), n=50, d=3, seed=13))
    grid = RankGrid.from_mapping(2, 3, {(1, 1, 1): 0.5, (2, 2, 1): 0.5})
    model = JointDensityModel(smooth(grid), fit_marginals(sample))
    with raises(DegenerateSlice):
        model.conditional_slice({2: 1.0e6}, [0.0], [0.0])


def test_model_sample(independent_model):
    points = independent_model.sample(500, seed=14)
    assert points.shape == (500, 2)
    assert np.all(np.isfinite(points))
    assert np.array_equal(points, independent_model.sample(500, seed=14))


def test_pseudo_observations_likelihood_of_uniform(independent_model, gaussian_sample):
    u = pseudo_observations(gaussian_sample)
    assert independent_model.copula_log_likelihood(gaussian_sample) == approx(
        independent_model.copula.log_likelihood(u)
    )
    assert independent_model.copula_log_likelihood(gaussian_sample) == approx(0.0)


@mark.slow
def test_sphere_slice_is_a_ring():
    params = load_config()["regress"]
    sample = generate(GeneratorSpec(SphereNoise(a=6.0), n=3000, d=5, seed=15))
    config = EstimatorConfig(params["m"], strategy=Random(params["b"], seed=16))
    model = JointDensityModel.fit(sample, config)

    axis = np.linspace(-9.0, 9.0, 61)
    values = model.conditional_slice({2: 0.0, 3: 0.0, 4: 0.0}, axis, axis)

    theta = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    i = np.abs(axis[:, None] - 6.0 * np.cos(theta)[None, :]).argmin(axis=0)
    j = np.abs(axis[:, None] - 6.0 * np.sin(theta)[None, :]).argmin(axis=0)
    origin = np.abs(axis).argmin()
    assert values[i, j].mean() >= 2.0 * values[origin, origin]
