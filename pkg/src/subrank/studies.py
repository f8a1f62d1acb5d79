"""Simulation studies: null moments, test power and grid convergence.

A study is described by an :class:`ExperimentSpec`, usually read from a YAML
(or JSON) file such as::

    study: moment
    seed: 1945
    replications: 200
    configurations:
      - {m: 10, d: 2, n: 100, b: 150000}
      - {m: 10, d: 3, n: 100, b: 150000}

Every row of the resulting :class:`StudyReport` is reproducible from the
specification alone; replication ``i`` of configuration ``j`` draws from
streams derived from ``(seed, j, i)``.
"""
from __future__ import annotations

import json
import os
import pathlib
import time
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np  # type: ignore
import pandas  # type: ignore
import yaml  # type: ignore
from joblib import Parallel, delayed  # type: ignore

from subrank.errors import SubrankError
from subrank.generators import (
    GaussianCopula,
    GeneratorSpec,
    IndependentGaussian,
    generate,
    gaussian_copula_density,
    kind_from_dict,
    kind_name,
)
from subrank.grid import RankGrid
from subrank.independence import Statistic, independence_test, l2_statistic, load_or_calibrate
from subrank.null_theory import (
    aggregate_moments,
    independence_pmf,
    mc_convergence_deviation,
    mc_rank_pmf,
)
from subrank.ranks import SampleMatrix, estimate_exhaustive, estimate_random, substream

STUDIES = ("moment", "power", "convergence")

_MOMENT_STREAM = 10
_POWER_STREAM = 11
_CONVERGENCE_STREAM = 12


@dataclass(frozen=True)
class StudyConfig:
    """One row of a study: shapes, sub-sample count and data process."""

    m: int
    d: int
    n: int
    b: int = 0
    generator: dict = field(default_factory=lambda: {"kind": "independent"})

    def __post_init__(self):
        if self.m < 2 or self.d < 1 or self.n < self.m:
            raise ValueError(
                f"invalid configuration (m={self.m}, d={self.d}, n={self.n}):"
                " need m >= 2, d >= 1 and n >= m"
            )
        if self.b < 0:
            raise ValueError(f"number of sub-samples must be nonnegative ({self.b})")

    def as_dict(self) -> dict:
        return {"m": self.m, "d": self.d, "n": self.n, "b": self.b, "generator": self.generator}


@dataclass(frozen=True)
class ExperimentSpec:
    """Description of a simulation study.

    Parameters
    ----------
    study : {"moment", "power", "convergence"}
        Which study to run.
    configurations : tuple of StudyConfig
        Rows of the study.
    replications : int
        Monte Carlo replications per row.
    seed : int
        Root seed.
    output : str, optional
        Base path of the written report.
    options : dict, optional
        Study-specific settings (``level``, ``n_sims``, ``statistic``,
        ``cache_dir`` for power studies; ``rho``, ``m_values``, ``mc_reps``
        for convergence studies).
    """

    study: str
    configurations: tuple[StudyConfig, ...]
    replications: int
    seed: int = 0
    output: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r} (not one of {', '.join(STUDIES)})")
        if self.replications < 1:
            raise ValueError(f"replications must be positive ({self.replications})")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        configurations = tuple(StudyConfig(**row) for row in data.pop("configurations", ()))
        known = {"study", "replications", "seed", "output"}
        return cls(
            study=data["study"],
            configurations=configurations,
            replications=int(data["replications"]),
            seed=int(data.get("seed", 0)),
            output=data.get("output"),
            options={key: value for key, value in data.items() if key not in known},
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentSpec":
        """Read a specification from a YAML or JSON file."""
        with open(path) as fp:
            return cls.from_dict(yaml.safe_load(fp))


@dataclass
class StudyReport:
    """Rows of a finished study plus metadata and extra tables."""

    study: str
    rows: list[dict]
    metadata: dict = field(default_factory=dict)
    tables: dict[str, pandas.DataFrame] = field(default_factory=dict)

    @property
    def failed(self) -> list[dict]:
        return [row for row in self.rows if row.get("status") == "failed"]

    def to_frame(self) -> pandas.DataFrame:
        return pandas.json_normalize(self.rows)

    def write(self, output: str | os.PathLike) -> list[pathlib.Path]:
        """Write ``<output>.csv``, ``<output>.json`` and one CSV per extra table."""
        base = pathlib.Path(output)
        base.parent.mkdir(parents=True, exist_ok=True)

        written = [base.with_name(base.name + ".csv"), base.with_name(base.name + ".json")]
        self.to_frame().to_csv(written[0], index=False)
        with open(written[1], "w") as fp:
            json.dump(
                {"study": self.study, "metadata": self.metadata, "rows": self.rows},
                fp,
                indent=2,
                default=str,
            )
        for name, table in self.tables.items():
            path = base.with_name(f"{base.name}-{name}.csv")
            table.to_csv(path, index=False)
            written.append(path)
        return written


def _replicate(func: Callable, args: list[tuple], n_jobs: int) -> list:
    if n_jobs == 1:
        return [func(*arg) for arg in args]
    return Parallel(n_jobs=n_jobs)(delayed(func)(*arg) for arg in args)


def _estimate(sample: SampleMatrix, config: StudyConfig, seed) -> RankGrid:
    if config.b == 0:
        return estimate_exhaustive(sample, config.m)
    return estimate_random(sample, config.m, config.b, seed=seed)


def _draw(config: StudyConfig, seed) -> SampleMatrix:
    kind = kind_from_dict(config.generator)
    state = int(seed.generate_state(1, dtype=np.uint64)[0])
    return generate(GeneratorSpec(kind, n=config.n, d=config.d, seed=state))


def _failed_row(config: StudyConfig, error: Exception) -> dict:
    warnings.warn(f"study row {config.as_dict()} failed: {error}", stacklevel=3)
    return {**config.as_dict(), "status": "failed", "error": str(error)}


def _moment_replication(config: StudyConfig, seed: int, row: int, index: int) -> float:
    sample = _draw(config, substream(seed, _MOMENT_STREAM, row, index, 0))
    grid = _estimate(sample, config, substream(seed, _MOMENT_STREAM, row, index, 1))
    return l2_statistic(grid, independence_pmf(config.m, config.d))


def run_moment_study(spec: ExperimentSpec, n_jobs: int = 1) -> StudyReport:
    """Compare the simulated moments of ``T`` with their limits.

    For every configuration the mean and variance of ``T`` over the
    replications are reported along with ``mean * n / mean_limit`` and
    ``var * n^2 / var_limit``. In one dimension both limits vanish and the
    ratios are reported as degenerate.
    """
    start = time.perf_counter()
    rows = []
    for j, config in enumerate(spec.configurations):
        try:
            values = np.asarray(
                _replicate(
                    _moment_replication,
                    [(config, spec.seed, j, i) for i in range(spec.replications)],
                    n_jobs,
                )
            )
            moments = aggregate_moments(config.m, config.d)
        except (SubrankError, ValueError, MemoryError) as error:
            rows.append(_failed_row(config, error))
            continue

        reps = len(values)
        mean = float(values.mean())
        var = float(values.var(ddof=1)) if reps > 1 else 0.0
        degenerate = moments.mean_limit == 0 or moments.var_limit == 0
        rows.append(
            {
                **config.as_dict(),
                "status": "degenerate" if degenerate else "ok",
                "replications": reps,
                "mean": mean,
                "mean_se": float(values.std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0,
                "variance": var,
                "variance_se": var * float(np.sqrt(2.0 / (reps - 1))) if reps > 1 else 0.0,
                "mean_limit": float(moments.mean_limit),
                "var_limit": float(moments.var_limit),
                "mean_ratio": None
                if degenerate
                else mean * config.n / float(moments.mean_limit),
                "variance_ratio": None
                if degenerate
                else var * config.n**2 / float(moments.var_limit),
            }
        )

    return StudyReport(
        study="moment",
        rows=rows,
        metadata={
            "seed": spec.seed,
            "replications": spec.replications,
            "ratios": "empirical / limit",
            "budget": "sub-sample counts are configured per row, b = 0 enumerates every subset",
            "runtime": time.perf_counter() - start,
        },
    )


def _power_replication(
    config: StudyConfig, calibration, level: float, seed: int, row: int, index: int
) -> bool:
    sample = _draw(config, substream(seed, _POWER_STREAM, row, index, 0))
    result = independence_test(
        sample, calibration, level, seed=substream(seed, _POWER_STREAM, row, index, 1)
    )
    return result.reject


def run_power_study(spec: ExperimentSpec, n_jobs: int = 1) -> StudyReport:
    """Rejection rates of the calibrated independence test.

    Options: ``level`` (0.05), ``n_sims`` (1000), ``statistic`` (``"kl"``)
    and ``cache_dir`` where calibrations are stored.
    """
    start = time.perf_counter()
    level = float(spec.options.get("level", 0.05))
    n_sims = int(spec.options.get("n_sims", 1000))
    statistic = Statistic(spec.options.get("statistic", "kl"))
    cache_dir = spec.options.get("cache_dir")

    rows = []
    for j, config in enumerate(spec.configurations):
        try:
            if config.b < 1:
                raise ValueError("power studies need a positive number of sub-samples")
            calibration = load_or_calibrate(
                cache_dir,
                config.m,
                config.d,
                config.n,
                config.b,
                n_sims=n_sims,
                seed=spec.seed,
                statistic=statistic,
                n_jobs=n_jobs,
            )
            rejects = np.asarray(
                _replicate(
                    _power_replication,
                    [
                        (config, calibration, level, spec.seed, j, i)
                        for i in range(spec.replications)
                    ],
                    n_jobs,
                )
            )
        except (SubrankError, ValueError, MemoryError) as error:
            rows.append(_failed_row(config, error))
            continue

        power = float(rejects.mean())
        rows.append(
            {
                **config.as_dict(),
                "status": "ok",
                "replications": len(rejects),
                "level": level,
                "statistic": statistic.value,
                "n_sims": n_sims,
                "power": power,
                "power_se": float(np.sqrt(power * (1.0 - power) / len(rejects))),
            }
        )

    return StudyReport(
        study="power",
        rows=rows,
        metadata={
            "seed": spec.seed,
            "replications": spec.replications,
            "level": level,
            "n_sims": n_sims,
            "statistic": statistic.value,
            "runtime": time.perf_counter() - start,
        },
    )


def center_rank(m: int) -> int:
    return (m + 1) // 2


def _convergence_replication(config: StudyConfig, seed: int, row: int, index: int):
    sample = _draw(config, substream(seed, _CONVERGENCE_STREAM, row, index, 0))
    grid = _estimate(sample, config, substream(seed, _CONVERGENCE_STREAM, row, index, 1))
    corner = (1,) * config.d
    center = (center_rank(config.m),) * config.d
    return grid.weight(corner), grid.weight(center)


def run_convergence_study(spec: ExperimentSpec, n_jobs: int = 1) -> StudyReport:
    """Spread of grid cells across replications and convergence of the grid law.

    For every configuration the estimates at the corner cell ``(1, ..., 1)``
    and at the center cell are collected over the replications; their
    distributions are exported as the ``cells`` table. The ``trend`` table
    holds the deviation of ``m^d P(r)`` from an equicorrelated Gaussian
    copula density (options ``rho``, ``m_values``, ``mc_reps``, ``trend_d``).
    """
    start = time.perf_counter()
    rows, cells = [], []
    for j, config in enumerate(spec.configurations):
        try:
            values = np.asarray(
                _replicate(
                    _convergence_replication,
                    [(config, spec.seed, j, i) for i in range(spec.replications)],
                    n_jobs,
                )
            )
        except (SubrankError, ValueError, MemoryError) as error:
            rows.append(_failed_row(config, error))
            continue

        reps = len(values)
        row = {**config.as_dict(), "status": "ok", "replications": reps}
        for column, name in enumerate(("corner", "center")):
            row[f"{name}_mean"] = float(values[:, column].mean())
            row[f"{name}_variance"] = float(values[:, column].var(ddof=1)) if reps > 1 else 0.0
            row[f"{name}_se"] = (
                float(values[:, column].std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
            )
        row["uniform"] = float(config.m) ** -config.d
        rows.append(row)

        for i, (corner, center) in enumerate(values):
            cells.append({"row": j, "replication": i, "corner": corner, "center": center})

    rho = float(spec.options.get("rho", 0.5))
    trend_d = int(spec.options.get("trend_d", 2))
    mc_reps = int(spec.options.get("mc_reps", 20000))
    trend = []
    for m in spec.options.get("m_values", (5, 10, 20)):
        kind = GaussianCopula(rho) if rho != 0.0 else IndependentGaussian()
        draw = GeneratorSpec(kind, n=m, d=trend_d, seed=spec.seed).sampler()
        grid = mc_rank_pmf(
            draw, int(m), trend_d, mc_reps, seed=substream(spec.seed, _CONVERGENCE_STREAM, int(m))
        )
        largest, rms = mc_convergence_deviation(grid, lambda u: gaussian_copula_density(rho, u))
        trend.append(
            {
                "m": int(m),
                "d": trend_d,
                "rho": rho,
                "generator": kind_name(kind),
                "mc_reps": mc_reps,
                "max_deviation": largest,
                "rms_deviation": rms,
            }
        )

    return StudyReport(
        study="convergence",
        rows=rows,
        metadata={
            "seed": spec.seed,
            "replications": spec.replications,
            "runtime": time.perf_counter() - start,
        },
        tables={"cells": pandas.DataFrame(cells), "trend": pandas.DataFrame(trend)},
    )


def run_study(spec: ExperimentSpec, n_jobs: int = 1) -> StudyReport:
    runner = {
        "moment": run_moment_study,
        "power": run_power_study,
        "convergence": run_convergence_study,
    }[spec.study]
    return runner(spec, n_jobs=n_jobs)
