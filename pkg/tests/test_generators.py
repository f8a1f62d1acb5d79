"""Unit tests for the data-generating processes."""
import numpy as np  # type: ignore
from pytest import approx, mark, raises  # type: ignore
from scipy import integrate  # type: ignore

from subrank.errors import SingularCorrelation
from subrank.generators import (
    KINDS,
    Comonotone,
    GaussianCopula,
    GeneratorSpec,
    IndependentGaussian,
    Polynomial,
    RandomVolatility,
    SphereNoise,
    check_correlation,
    equicorrelation,
    gaussian_copula_density,
    generate,
    kind_from_dict,
    kind_name,
)
from subrank.null_theory import comonotone_pmf
from subrank.ranks import estimate_exhaustive


@mark.parametrize("name", sorted(KINDS))
def test_generate_is_seeded(name):
    kind = kind_from_dict({"kind": name})
    first = generate(GeneratorSpec(kind, n=20, d=3, seed=4))
    second = generate(GeneratorSpec(kind, n=20, d=3, seed=4))

    assert first.values.shape == (20, 3)
    assert np.array_equal(first.values, second.values)
    assert kind_name(kind) == name


def test_unknown_kind():
    with raises(ValueError):
        kind_from_dict({"kind": "clayton"})


def test_kind_parameters():
    assert kind_from_dict({"kind": "sphere", "a": 2.0}) == SphereNoise(a=2.0)
    with raises(TypeError):
        kind_from_dict({"kind": "comonotone", "rho": 0.2})


@mark.parametrize(
    "kind,d",
    (
        (Polynomial(p=0), 2),
        (Polynomial(p=1.5), 2),
        (Polynomial(), 1),
        (RandomVolatility(a=-1.0), 3),
        (RandomVolatility(d_d=4), 3),
        (SphereNoise(a=-1.0), 2),
        (GaussianCopula(rho=1.0), 2),
    ),
)
def test_invalid_specs(kind, d):
    with raises(ValueError):
        GeneratorSpec(kind, n=10, d=d)


def test_invalid_shape():
    with raises(ValueError):
        GeneratorSpec(IndependentGaussian(), n=0, d=2)


def test_independent_marginals():
    n = 10**5
    values = generate(GeneratorSpec(IndependentGaussian(), n=n, d=2, seed=0)).values
    assert np.all(np.abs(values.mean(axis=0)) < 4.0 / np.sqrt(n))
    assert np.all(np.abs(values.var(axis=0) - 1.0) < 4.0 * np.sqrt(2.0 / n))


def test_polynomial_residual_uncorrelated():
    n = 10**5
    kind = Polynomial(p=2, coef=0.5)
    values = generate(GeneratorSpec(kind, n=n, d=3, seed=1)).values
    residual = values[:, 1] - 0.5 * values[:, 0] ** 2

    assert abs(np.corrcoef(residual, values[:, 0])[0, 1]) < 4.0 / np.sqrt(n)
    assert np.corrcoef(values[:, 1], values[:, 0] ** 2)[0, 1] > 0.5
    assert abs(values[:, 2].mean()) < 4.0 / np.sqrt(n)


def test_random_volatility_without_scale_is_independent():
    spec = GeneratorSpec(RandomVolatility(a=0.0, d_d=2), n=50, d=3, seed=2)
    expected = np.random.default_rng(2).standard_normal((50, 3))
    assert generate(spec).values == approx(expected)


def test_random_volatility_shares_scale():
    values = generate(GeneratorSpec(RandomVolatility(a=1.0, d_d=2), n=10**5, d=3, seed=3)).values
    squares = values**2
    assert np.corrcoef(squares[:, 0], squares[:, 1])[0, 1] > 0.1
    assert abs(np.corrcoef(squares[:, 0], squares[:, 2])[0, 1]) < 0.05


def test_comonotone_grid():
    sample = generate(GeneratorSpec(Comonotone(), n=9, d=2, seed=5))
    assert estimate_exhaustive(sample, 4).to_array() == approx(comonotone_pmf(4).to_array())


def test_sphere_radius():
    n, a, d = 10**4, 6.0, 5
    values = generate(GeneratorSpec(SphereNoise(a=a), n=n, d=d, seed=6)).values
    squared = np.sum(values**2, axis=1)
    se = squared.std(ddof=1) / np.sqrt(n)
    assert abs(squared.mean() - (a**2 + d)) < 4.0 * se


def test_gaussian_copula_correlation():
    values = generate(GeneratorSpec(GaussianCopula(rho=0.5), n=10**4, d=3, seed=7)).values
    corr = np.corrcoef(values, rowvar=False)
    assert corr[np.triu_indices(3, 1)] == approx(np.full(3, 0.5), abs=0.05)


def test_equicorrelation():
    assert equicorrelation(0.25, 3) == approx(
        np.array([[1.0, 0.25, 0.25], [0.25, 1.0, 0.25], [0.25, 0.25, 1.0]])
    )


@mark.parametrize("rho,d", ((1.0, 2), (-0.5, 3), (-1.0, 2)))
def test_singular_correlation(rho, d):
    with raises(SingularCorrelation):
        check_correlation(rho, d)


def test_copula_density_independence():
    points = np.random.default_rng(8).random((10, 3))
    assert gaussian_copula_density(0.0, points) == approx(np.ones(10))
    assert gaussian_copula_density(0.0, (0.2, 0.7)) == 1.0


def test_copula_density_symmetry():
    assert gaussian_copula_density(0.5, (0.2, 0.7)) == approx(
        gaussian_copula_density(0.5, (0.7, 0.2))
    )


@mark.slow
def test_copula_density_integrates_to_one():
    value, _ = integrate.dblquad(
        lambda y, x: gaussian_copula_density(0.5, (x, y)), 0.0, 1.0, 0.0, 1.0, epsabs=1e-9
    )
    assert value == approx(1.0, abs=1e-6)


def test_copula_density_domain():
    with raises(ValueError):
        gaussian_copula_density(0.5, (0.2, 1.2))
