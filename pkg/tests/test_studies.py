"""Unit tests for the simulation studies."""
import json

import numpy as np  # type: ignore
import pandas  # type: ignore
import yaml  # type: ignore
from pytest import approx, mark, raises, warns  # type: ignore

from subrank.studies import (
    ExperimentSpec,
    StudyConfig,
    center_rank,
    run_convergence_study,
    run_moment_study,
    run_power_study,
    run_study,
)


def _spec(study, configurations, replications=20, **options):
    return ExperimentSpec.from_dict(
        {
            "study": study,
            "seed": 5,
            "replications": replications,
            "configurations": configurations,
            **options,
        }
    )


def test_config_validation():
    with raises(ValueError):
        StudyConfig(m=1, d=2, n=10)
    with raises(ValueError):
        StudyConfig(m=5, d=2, n=4)
    with raises(ValueError):
        StudyConfig(m=3, d=2, n=10, b=-1)


def test_spec_validation():
    with raises(ValueError):
        _spec("bootstrap", [])
    with raises(ValueError):
        _spec("moment", [], replications=0)


def test_spec_from_yaml(tmpdir):
    data = {
        "study": "power",
        "seed": 3,
        "replications": 10,
        "level": 0.1,
        "configurations": [{"m": 4, "d": 2, "n": 12, "b": 100}],
    }
    with tmpdir.as_cwd():
        with open("spec.yaml", "w") as fp:
            yaml.safe_dump(data, fp)
        spec = ExperimentSpec.load("spec.yaml")

    assert spec.study == "power"
    assert spec.seed == 3
    assert spec.options == {"level": 0.1}
    assert spec.configurations == (StudyConfig(m=4, d=2, n=12, b=100),)


def test_moment_study():
    spec = _spec("moment", [{"m": 3, "d": 2, "n": 8}, {"m": 3, "d": 2, "n": 20, "b": 500}])
    report = run_moment_study(spec)

    assert report.study == "moment"
    assert len(report.rows) == 2
    for row in report.rows:
        assert row["status"] == "ok"
        assert row["replications"] == 20
        assert row["mean"] > 0.0
        assert row["variance_se"] >= 0.0
        assert row["mean_ratio"] == approx(row["mean"] * row["n"] / row["mean_limit"])


def test_moment_study_is_reproducible():
    configurations = [{"m": 3, "d": 2, "n": 10, "b": 200}]
    first = run_moment_study(_spec("moment", configurations))
    second = run_moment_study(_spec("moment", configurations), n_jobs=2)
    assert first.rows[0]["mean"] == second.rows[0]["mean"]
    assert first.rows[0]["variance"] == second.rows[0]["variance"]


def test_moment_study_degenerate():
    report = run_moment_study(_spec("moment", [{"m": 3, "d": 1, "n": 10}], replications=5))
    row = report.rows[0]

    assert row["status"] == "degenerate"
    assert row["mean_ratio"] is None
    assert row["mean"] == approx(0.0)


def test_failed_rows_are_reported():
    spec = _spec(
        "moment",
        [
            {"m": 3, "d": 2, "n": 10, "generator": {"kind": "gaussian-copula", "rho": 2.0}},
            {"m": 3, "d": 2, "n": 10},
        ],
        replications=5,
    )
    with warns(UserWarning):
        report = run_study(spec)

    assert [row["status"] for row in report.rows] == ["failed", "ok"]
    assert len(report.failed) == 1
    assert "error" in report.failed[0]


def test_power_study(tmpdir):
    spec = _spec(
        "power",
        [
            {"m": 4, "d": 2, "n": 12, "b": 200},
            {"m": 4, "d": 2, "n": 12, "b": 200, "generator": {"kind": "comonotone"}},
        ],
        replications=10,
        n_sims=100,
        cache_dir=str(tmpdir / "cache"),
    )
    report = run_power_study(spec)

    assert [row["status"] for row in report.rows] == ["ok", "ok"]
    assert 0.0 <= report.rows[0]["power"] <= 1.0
    assert report.rows[1]["power"] == 1.0
    assert len((tmpdir / "cache").listdir()) == 1


def test_power_study_needs_subsamples():
    spec = _spec("power", [{"m": 4, "d": 2, "n": 12}], replications=2, n_sims=100)
    with warns(UserWarning):
        report = run_power_study(spec)
    assert report.rows[0]["status"] == "failed"


def test_center_rank():
    assert center_rank(5) == 3
    assert center_rank(4) == 2


def test_convergence_study():
    spec = _spec(
        "convergence",
        [{"m": 3, "d": 2, "n": 10, "b": 300}],
        replications=6,
        m_values=[3, 4],
        mc_reps=2000,
    )
    report = run_convergence_study(spec)
    row = report.rows[0]

    assert row["status"] == "ok"
    assert row["uniform"] == approx(1 / 9)
    assert 0.0 <= row["corner_mean"] <= 1.0 / 3.0
    assert len(report.tables["cells"]) == 6
    assert list(report.tables["trend"].m) == [3, 4]
    assert np.all(report.tables["trend"].max_deviation >= report.tables["trend"].rms_deviation)


def test_report_write(tmpdir):
    report = run_moment_study(_spec("moment", [{"m": 3, "d": 2, "n": 8}], replications=4))
    with tmpdir.as_cwd():
        written = report.write("out/moment")
        frame = pandas.read_csv("out/moment.csv")
        with open("out/moment.json") as fp:
            data = json.load(fp)

    assert [path.name for path in written] == ["moment.csv", "moment.json"]
    assert frame.status.tolist() == ["ok"]
    assert data["study"] == "moment"
    assert data["metadata"]["seed"] == 5


def test_report_write_tables(tmpdir):
    spec = _spec(
        "convergence",
        [{"m": 3, "d": 2, "n": 6}],
        replications=3,
        m_values=[3],
        mc_reps=500,
    )
    with tmpdir.as_cwd():
        written = run_convergence_study(spec).write("conv")
    assert sorted(path.name for path in written) == [
        "conv-cells.csv",
        "conv-trend.csv",
        "conv.csv",
        "conv.json",
    ]


@mark.slow
def test_corner_cell_is_more_dispersed():
    spec = _spec(
        "convergence",
        [{"m": 8, "d": 2, "n": 60, "b": 20000}],
        replications=100,
        m_values=[5],
        mc_reps=2000,
    )
    row = run_convergence_study(spec, n_jobs=-1).rows[0]
    assert row["corner_variance"] > row["center_variance"]
    assert row["center_mean"] == approx(1 / 64, abs=4.0 * row["center_se"] + 1e-4)


@mark.slow
def test_moment_ratio_near_printed_values():
    spec = _spec(
        "moment", [{"m": 10, "d": 2, "n": 100, "b": 150000}], replications=200
    )
    row = run_moment_study(spec, n_jobs=-1).rows[0]
    assert 1.0 <= row["mean_ratio"] <= 1.6
