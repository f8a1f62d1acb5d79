"""Seeded data-generating processes used by the studies."""
from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import Union

import numpy as np  # type: ignore
from scipy.stats import multivariate_normal, norm  # type: ignore

from subrank.errors import SingularCorrelation
from subrank.ranks import SampleMatrix


@dataclass(frozen=True)
class IndependentGaussian:
    """Independent standard Gaussian coordinates."""

    def validate(self, d: int) -> None:
        pass

    def draw(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, d))


@dataclass(frozen=True)
class Polynomial:
    """``X_2 = coef * X_1^p + eps``, all other coordinates independent."""

    p: int = 1
    coef: float = 0.5

    def validate(self, d: int) -> None:
        if self.p < 1 or int(self.p) != self.p:
            raise ValueError(f"polynomial degree must be a positive integer ({self.p})")
        if d < 2:
            raise ValueError(f"polynomial dependence needs d >= 2 ({d})")

    def draw(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        values = rng.standard_normal((n, d))
        values[:, 1] += self.coef * values[:, 0] ** self.p
        return values


@dataclass(frozen=True)
class RandomVolatility:
    """The first ``d_d`` coordinates share a log-normal variance.

    ``V`` is log-normal with log-scale standard deviation ``a``; coordinates
    up to ``d_d`` are ``N(0, V)`` and the others ``N(0, 1)``.
    """

    a: float = 1.0
    d_d: int = 2

    def validate(self, d: int) -> None:
        if self.a < 0.0:
            raise ValueError(f"volatility scale must be nonnegative ({self.a})")
        if not 2 <= self.d_d <= d:
            raise ValueError(f"number of dependent coordinates must be in [2, {d}] ({self.d_d})")

    def draw(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        values = rng.standard_normal((n, d))
        variance = rng.lognormal(0.0, self.a, size=n)
        values[:, : self.d_d] *= np.sqrt(variance)[:, None]
        return values


@dataclass(frozen=True)
class Comonotone:
    """Every coordinate equal to one common Gaussian draw."""

    def validate(self, d: int) -> None:
        pass

    def draw(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        return np.repeat(rng.standard_normal((n, 1)), d, axis=1)


@dataclass(frozen=True)
class SphereNoise:
    """A point of the sphere of radius ``a`` plus Gaussian noise."""

    a: float = 6.0

    def validate(self, d: int) -> None:
        if self.a < 0.0:
            raise ValueError(f"sphere radius must be nonnegative ({self.a})")

    def draw(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        direction = rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        return self.a * direction + rng.standard_normal((n, d))


@dataclass(frozen=True)
class GaussianCopula:
    """Standard Gaussian coordinates with common correlation ``rho``."""

    rho: float = 0.5

    def validate(self, d: int) -> None:
        check_correlation(self.rho, d)

    def draw(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(np.zeros(d), equicorrelation(self.rho, d), size=n)


Kind = Union[
    IndependentGaussian, Polynomial, RandomVolatility, Comonotone, SphereNoise, GaussianCopula
]

KINDS = {
    "independent": IndependentGaussian,
    "polynomial": Polynomial,
    "random-volatility": RandomVolatility,
    "comonotone": Comonotone,
    "sphere": SphereNoise,
    "gaussian-copula": GaussianCopula,
}


def kind_from_dict(params: dict) -> Kind:
    """Build a generator kind from ``{"kind": name, **parameters}``.

    Examples
    --------
    >>> from subrank.generators import kind_from_dict
    >>> kind_from_dict({"kind": "polynomial", "p": 2})
    Polynomial(p=2, coef=0.5)
    """
    params = dict(params)
    name = params.pop("kind")
    try:
        cls = KINDS[name]
    except KeyError:
        raise ValueError(
            f"unknown generator kind {name!r} (not one of {', '.join(sorted(KINDS))})"
        ) from None
    return cls(**params)


def kind_name(kind: Kind) -> str:
    return {cls: name for name, cls in KINDS.items()}[type(kind)]


@dataclass(frozen=True)
class GeneratorSpec:
    """A data-generating process with its sample shape and seed."""

    kind: Kind
    n: int
    d: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive ({self.n})")
        if self.d < 1:
            raise ValueError(f"d must be positive ({self.d})")
        self.kind.validate(self.d)

    def sampler(self) -> Callable[[int, np.random.Generator], np.ndarray]:
        """``draw(size, rng)`` returning ``size`` observations of this process."""
        kind, d = self.kind, self.d
        return lambda size, rng: kind.draw(size, d, rng)


def generate(spec: GeneratorSpec) -> SampleMatrix:
    """Draw ``spec.n`` observations of the process.

    Examples
    --------
    >>> from subrank.generators import Comonotone, GeneratorSpec, generate
    >>> sample = generate(GeneratorSpec(Comonotone(), n=5, d=3, seed=1))
    >>> sample.values.shape, bool((sample.values[:, 0] == sample.values[:, 2]).all())
    ((5, 3), True)
    """
    rng = np.random.default_rng(spec.seed)
    return SampleMatrix(spec.kind.draw(spec.n, spec.d, rng))


def equicorrelation(rho: float, d: int) -> np.ndarray:
    return np.full((d, d), rho) + (1.0 - rho) * np.eye(d)


def check_correlation(rho: float, d: int) -> None:
    """Raise unless the equicorrelation matrix is positive definite."""
    lower = -1.0 / (d - 1) if d > 1 else -np.inf
    if not lower < rho < 1.0:
        raise SingularCorrelation(rho, d)


def gaussian_copula_density(rho: float, x) -> np.ndarray | float:
    """Density of the equicorrelated Gaussian copula.

    ``x`` is a point of ``(0, 1)^d`` or an array of points (last axis of
    length ``d``).

    Examples
    --------
    >>> from subrank.generators import gaussian_copula_density
    >>> gaussian_copula_density(0.0, (0.2, 0.7))
    1.0
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    x = np.atleast_2d(x)
    d = x.shape[-1]
    check_correlation(rho, d)
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("copula densities are evaluated on [0, 1]^d")

    z = norm.ppf(x)
    if rho == 0.0:
        density = np.ones(len(x))
    else:
        log_density = multivariate_normal(
            mean=np.zeros(d), cov=equicorrelation(rho, d)
        ).logpdf(z) - np.sum(norm.logpdf(z), axis=-1)
        density = np.exp(np.atleast_1d(log_density))
    return float(density[0]) if scalar else density
