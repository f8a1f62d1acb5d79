import json
import os
import pathlib
import sys
import time
import warnings
from functools import partial
from io import StringIO
from typing import TextIO

import click
import numpy as np  # type: ignore
import pandas  # type: ignore
import tomlkit as toml  # type: ignore
import yaml  # type: ignore

from subrank.combinatorics import identity_suite, stirling_bound_check
from subrank.errors import SubrankError
from subrank.generators import KINDS, GeneratorSpec, generate as _generate, kind_from_dict
from subrank.independence import (
    NullCalibration,
    Statistic,
    independence_test,
    load_or_calibrate,
)
from subrank.null_theory import (
    Variant,
    aggregate_moments,
    border_dimension,
    corollary_approx,
    corollary_linear_part,
    theorem2_closed_form,
)
from subrank.ranks import (
    EstimatorConfig,
    Exhaustive,
    Random,
    RandomBreak,
    Reject,
    estimate as _estimate,
    read_sample,
    subsample_count_heuristic,
    write_grid,
)
from subrank.smoother import JointDensityModel
from subrank.studies import ExperimentSpec, run_study

out = partial(click.secho, bold=True, err=True)
err = partial(click.secho, fg="red", err=True)

EXIT_VALIDATION = 2
EXIT_PARTIAL_FAILURE = 3

SAMPLE_DATA = [[2.29, -0.97], [-1.2, -0.95], [-0.69, 0.75], [-0.41, -0.12]]


def _tomlkit_to_popo(d):
    """Convert a tomlkit doc to plain-old-python objects.

    Examples
    --------
    >>> import tomlkit
    >>> from subrank.cli import _tomlkit_to_popo

    >>> contents = \"\"\"
    ... [subrank.estimator]
    ... m = 8
    ... tie_policy = "reject"
    ... [subrank.test]
    ... level = 0.05
    ... \"\"\"

    >>> doc = tomlkit.parse(contents)
    >>> isinstance(doc["subrank"]["estimator"]["m"], tomlkit.items.Item)
    True

    >>> popo = _tomlkit_to_popo(doc)
    >>> popo
    {'subrank': {'estimator': {'m': 8, 'tie_policy': 'reject'}, 'test': {'level': 0.05}}}
    >>> isinstance(popo["subrank"]["estimator"]["m"], tomlkit.items.Item)
    False
    >>> isinstance(popo["subrank"]["test"]["level"], tomlkit.items.Item)
    False
    """
    try:
        result = d.value
    except AttributeError:
        result = d

    if isinstance(result, list):
        result = [_tomlkit_to_popo(x) for x in result]
    elif isinstance(result, dict):
        result = {
            _tomlkit_to_popo(key): _tomlkit_to_popo(val) for key, val in result.items()
        }
    elif isinstance(result, toml.items.Integer):
        result = int(result)
    elif isinstance(result, toml.items.Float):
        result = float(result)
    elif isinstance(result, (toml.items.String, str)):
        result = str(result)
    elif isinstance(result, (toml.items.Bool, bool)):
        result = bool(result)
    else:
        if not isinstance(result, (int, float, str, bool)):
            warnings.warn(  # pragma: no cover
                "unexpected type ({!r}) encountered when converting toml to a dict".format(
                    result.__class__.__name__
                ),
                stacklevel=2,
            )

    return result


def load_config(stream: TextIO | None = None):
    """Load subrank config file.

    Parameters
    ----------
    stream : file-like, optional
        Opened config file or ``None``. If ``None``, return default
        values.

    Returns
    -------
    dict
        Config parameters, one table per section.
    """
    conf = {
        "subrank": {
            "estimator": {
                "m": 8,
                "b": 100000,
                "seed": 1945,
                "tie_policy": "reject",
                "dense_limit": 2**24,
                "enumeration_cap": 10**8,
            },
            "test": {"level": 0.05, "statistic": "kl", "n_sims": 1000},
            "regress": {"m": 20, "b": 1000000, "grid": "50x50"},
        }
    }
    if stream is not None:
        try:
            local_params = toml.parse(stream.read()).value["subrank"]
        except KeyError:
            local_params = {}

        for section, values in conf["subrank"].items():
            values.update(local_params.get(section, {}))

    return _tomlkit_to_popo(conf).pop("subrank")


def _contents_of_input_file(infile: str) -> str:
    params = load_config()

    def as_csv(data, header=None):
        with StringIO() as fp:
            np.savetxt(fp, data, header=header, delimiter=",", fmt="%.2f", comments="")
            contents = fp.getvalue()
        return contents

    experiment = {
        "study": "moment",
        "seed": params["estimator"]["seed"],
        "replications": 200,
        "configurations": [
            {"m": 10, "d": 2, "n": 100, "b": 150000},
            {"m": 10, "d": 3, "n": 100, "b": 150000},
        ],
    }

    contents = {
        "subrank.toml": toml.dumps({"subrank": params}),
        "sample.csv": as_csv(SAMPLE_DATA, header="x1,x2"),
        "experiment.yaml": yaml.safe_dump(experiment, sort_keys=False),
    }

    return contents[infile]


class SubrankGroup(click.Group):
    """Command group that turns validation errors into exit code 2."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (SubrankError, ValueError) as error:
            err(f"error: {error}")
            ctx.exit(EXIT_VALIDATION)


def _settings(ctx: click.Context) -> dict:
    return ctx.find_root().obj


def _resolve(value, default):
    return default if value is None else value


def _estimator_config(settings: dict, m, b, ties, exhaustive: bool, d: int) -> EstimatorConfig:
    params = settings["config"]["estimator"]
    m = _resolve(m, params["m"])
    seed = settings["seed"]
    ties = _resolve(ties, params["tie_policy"])
    if exhaustive:
        strategy = Exhaustive()
    else:
        b = _resolve(b, params["b"]) or subsample_count_heuristic(m, d)
        strategy = Random(b, seed=seed)
    return EstimatorConfig(
        m,
        strategy=strategy,
        tie_policy=RandomBreak(seed) if ties == "random" else Reject(),
        enumeration_cap=params["enumeration_cap"],
        dense_limit=params["dense_limit"],
    )


def _emit_json(data: dict, output: str | None) -> None:
    text = json.dumps(data, indent=2)
    if output is None:
        print(text)
    else:
        with open(output, "w") as fp:
            print(text, file=fp)


def _emit_frame(frame: pandas.DataFrame, output: str | None) -> None:
    if output is None:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")
    else:
        frame.to_csv(output, index=False, float_format="%.17g")


@click.group(cls=SubrankGroup)
@click.version_option()
@click.option(
    "--cd",
    default=".",
    type=click.Path(exists=True, file_okay=False, dir_okay=True, readable=True),
    help="change to directory, then execute",
)
@click.option(
    "--config",
    "config_file",
    type=click.Path(dir_okay=False),
    default=None,
    help="configuration file [default: subrank.toml, if present]",
)
@click.option("--seed", type=int, default=None, help="Root random seed.")
@click.option("--threads", type=click.IntRange(min=1), default=1, help="Number of workers.")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Output path.")
@click.option("-v", "--verbose", is_flag=True, help="Emit status messages to stderr.")
@click.pass_context
def subrank(ctx, cd, config_file, seed, threads, output, verbose) -> None:
    """Estimate, test and smooth the joint law of component ranks.

    \b
    Examples:

      Create a folder with example input files,

        $ mkdir subrank-example && cd subrank-example
        $ subrank setup

      Estimate the rank grid of the sample with sub-samples of size 3,

        $ subrank estimate sample.csv -m 3 --exhaustive

      Compute the null moments of the statistic,

        $ subrank theory -m 10 -d 5
    """
    os.chdir(cd)

    if config_file is None and pathlib.Path("subrank.toml").is_file():
        config_file = "subrank.toml"
    if config_file is not None:
        with open(config_file) as fp:
            config = load_config(fp)
    else:
        config = load_config()

    ctx.obj = {
        "config": config,
        "seed": _resolve(seed, config["estimator"]["seed"]),
        "threads": threads,
        "output": output,
        "verbose": verbose,
    }
    if verbose:
        out(toml.dumps({"subrank": config}))


@subrank.command()
@click.argument("infile", type=click.Path(exists=True, dir_okay=False))
@click.option("-m", type=int, default=None, help="Sub-sample size.")
@click.option("-b", type=int, default=None, help="Number of random sub-samples.")
@click.option("--exhaustive", is_flag=True, help="Use every subset of size m.")
@click.option("--ties", type=click.Choice(["reject", "random"]), default=None)
@click.pass_context
def estimate(ctx, infile, m, b, ties, exhaustive) -> None:
    """Estimate the rank grid of a sample."""
    settings = _settings(ctx)
    sample = read_sample(infile)
    config = _estimator_config(settings, m, b, ties, exhaustive, sample.d)

    start = time.perf_counter()
    grid = _estimate(sample, config, n_jobs=settings["threads"])
    if settings["verbose"]:
        out(f"{grid!r} in {time.perf_counter() - start:.3f} s")

    output = settings["output"]
    if output is None:
        _emit_frame(grid.to_frame(), None)
    else:
        strategy = config.strategy
        write_grid(
            grid,
            output,
            n=sample.n,
            strategy="random" if isinstance(strategy, Random) else "exhaustive",
            b=strategy.count if isinstance(strategy, Random) else grid.total_draws,
            seed=settings["seed"],
        )
        out(f"Output written to {output}")


def _test_options(func):
    for option in reversed(
        [
            click.option("-m", type=int, default=None, help="Sub-sample size."),
            click.option("-b", type=int, default=None, help="Number of random sub-samples."),
            click.option(
                "--statistic", type=click.Choice([s.value for s in Statistic]), default=None
            ),
            click.option("--n-sims", type=int, default=None, help="Null simulations."),
            click.option(
                "--cache",
                type=click.Path(file_okay=False),
                default=None,
                help="Directory of stored calibrations.",
            ),
        ]
    ):
        func = option(func)
    return func


def _test_params(settings: dict, m, b, statistic, n_sims, d: int) -> dict:
    estimator, test = settings["config"]["estimator"], settings["config"]["test"]
    m = _resolve(m, estimator["m"])
    b = _resolve(b, estimator["b"]) or subsample_count_heuristic(m, d)
    return {
        "m": m,
        "b": b,
        "statistic": Statistic(_resolve(statistic, test["statistic"])),
        "n_sims": _resolve(n_sims, test["n_sims"]),
    }


@subrank.command()
@click.argument("infile", type=click.Path(exists=True, dir_okay=False))
@_test_options
@click.option("--level", type=float, default=None, help="Level of the test.")
@click.pass_context
def test(ctx, infile, m, b, statistic, n_sims, cache, level) -> None:
    """Test a sample for independence of its components."""
    settings = _settings(ctx)
    sample = read_sample(infile)
    params = _test_params(settings, m, b, statistic, n_sims, sample.d)
    level = _resolve(level, settings["config"]["test"]["level"])

    if settings["verbose"]:
        out(f"calibrating {params} for n={sample.n}, d={sample.d}")
    calibration = load_or_calibrate(
        cache,
        params["m"],
        sample.d,
        sample.n,
        params["b"],
        n_sims=params["n_sims"],
        seed=settings["seed"],
        statistic=params["statistic"],
        n_jobs=settings["threads"],
    )
    result = independence_test(sample, calibration, level, n_jobs=settings["threads"])
    _emit_json(result.as_dict(), settings["output"])


@subrank.command()
@_test_options
@click.option("-d", type=int, required=True, help="Dimension.")
@click.option("-n", type=int, required=True, help="Sample size.")
@click.pass_context
def calibrate(ctx, m, b, statistic, n_sims, cache, d, n) -> None:
    """Simulate the null law of a statistic."""
    settings = _settings(ctx)
    params = _test_params(settings, m, b, statistic, n_sims, d)
    calibration: NullCalibration = load_or_calibrate(
        cache,
        params["m"],
        d,
        n,
        params["b"],
        n_sims=params["n_sims"],
        seed=settings["seed"],
        statistic=params["statistic"],
        n_jobs=settings["threads"],
    )
    _emit_json(calibration.as_dict(), settings["output"])


@subrank.command()
@click.option("-m", type=int, required=True, help="Sub-sample size.")
@click.option("-d", type=int, required=True, help="Dimension.")
@click.option("--identities", is_flag=True, help="Check the combinatorial identities.")
@click.option("--stirling", type=int, default=None, help="Check the Stirling bound up to m.")
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json")
@click.pass_context
def theory(ctx, m, d, identities, stirling, fmt) -> None:
    """Limiting moments of the statistic under independence."""
    settings = _settings(ctx)
    exact = aggregate_moments(m, d)
    report = {
        "m": m,
        "d": d,
        "aggregated": exact.as_dict(),
        "sign_corrected": theorem2_closed_form(m, d, Variant.SIGN_CORRECTED).as_dict(),
        "printed": theorem2_closed_form(m, d, Variant.PRINTED).as_dict(),
        "corollary": corollary_approx(m, d),
        "corollary_linear_part": corollary_linear_part(m, d),
        "border_dimension": {
            "printed": border_dimension(m, Variant.PRINTED),
            "sign_corrected": border_dimension(m, Variant.SIGN_CORRECTED),
        },
    }
    failed = False
    if identities:
        checks = identity_suite(m)
        report["identities"] = [
            {"name": c.name, "lhs": str(c.lhs), "rhs": str(c.rhs), "passed": c.passed}
            for c in checks.checks
        ]
        failed |= not checks.passed
    if stirling is not None:
        bound = stirling_bound_check(stirling)
        report["stirling"] = {
            "m_max": stirling,
            "passed": bound.passed,
            "failures": [row.m for row in bound.rows if not row.passed],
        }
        failed |= not bound.passed

    if fmt == "json":
        _emit_json(report, settings["output"])
    else:
        lines = [
            f"m = {m}, d = {d}",
            f"mean limit            {exact.mean_limit} ({float(exact.mean_limit):.6g})",
            f"variance limit        {exact.var_limit} ({float(exact.var_limit):.6g})",
            f"printed variance      {report['printed']['var_limit_float']:.6g}",
            f"corollary             {report['corollary']:.6g}",
            f"border dimension      {report['border_dimension']['printed']}"
            f" (sign-corrected: {report['border_dimension']['sign_corrected']})",
        ]
        for check in report.get("identities", ()):
            lines.append(f"{check['name']:<22}{'ok' if check['passed'] else 'FAILED'}")
        if "stirling" in report:
            lines.append(f"stirling bound        {'ok' if report['stirling']['passed'] else 'FAILED'}")
        print(os.linesep.join(lines))

    if failed:
        err("some checks failed")
        ctx.exit(EXIT_PARTIAL_FAILURE)


def _parse_param(value: str):
    try:
        return yaml.safe_load(value)
    except yaml.YAMLError:
        return value


@subrank.command()
@click.argument("kind", type=click.Choice(sorted(KINDS)), required=False)
@click.option("-n", type=int, default=None, help="Number of observations.")
@click.option("-d", type=int, default=None, help="Dimension.")
@click.option(
    "--param", "params", multiple=True, metavar="KEY=VALUE", help="Generator parameter."
)
@click.option(
    "--spec",
    "spec_file",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON or YAML generator specification.",
)
@click.pass_context
def generate(ctx, kind, n, d, params, spec_file) -> None:
    """Draw a sample from a data-generating process."""
    settings = _settings(ctx)
    spec = {}
    if spec_file is not None:
        with open(spec_file) as fp:
            spec = yaml.safe_load(fp) or {}

    generator = dict(spec.get("generator", {}))
    if kind is not None:
        generator["kind"] = kind
    for param in params:
        key, sep, value = param.partition("=")
        if not sep:
            raise click.BadParameter(f"{param!r} is not of the form KEY=VALUE", param_hint="--param")
        generator[key.strip()] = _parse_param(value)
    if "kind" not in generator:
        raise click.UsageError("a generator kind is required")

    n = _resolve(n, spec.get("n"))
    d = _resolve(d, spec.get("d"))
    if n is None or d is None:
        raise click.UsageError("both -n and -d are required")

    sample = _generate(
        GeneratorSpec(
            kind_from_dict(generator),
            n=int(n),
            d=int(d),
            seed=int(spec.get("seed", settings["seed"])),
        )
    )
    frame = pandas.DataFrame(sample.values, columns=[f"x{l + 1}" for l in range(sample.d)])
    _emit_frame(frame, settings["output"])


def parse_condition(text: str, d: int) -> dict[int, float]:
    """Parse ``"x3=0,x4=0"`` into ``{2: 0.0, 3: 0.0}``.

    Examples
    --------
    >>> from subrank.cli import parse_condition
    >>> parse_condition("x3=0, x5=1.5", 5)
    {2: 0.0, 4: 1.5}
    """
    fixed = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        name, sep, value = item.partition("=")
        name = name.strip().lower()
        if not sep or not name.startswith("x") or not name[1:].isdigit():
            raise ValueError(f"{item!r} is not of the form xK=VALUE")
        axis = int(name[1:]) - 1
        if not 0 <= axis < d:
            raise ValueError(f"coordinate {name} is out of range for d={d}")
        fixed[axis] = float(value)
    return fixed


def parse_grid(text: str) -> tuple[int, int]:
    """Parse ``"50x40"`` into ``(50, 40)``."""
    try:
        nx, ny = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"{text!r} is not of the form NxM") from None
    if nx < 2 or ny < 2:
        raise ValueError(f"grid must have at least two points per axis ({text})")
    return nx, ny


def parse_range(text: str, column: np.ndarray) -> tuple[float, float]:
    if text == "auto":
        return float(column.min()), float(column.max())
    try:
        low, high = (float(part) for part in text.split(":"))
    except ValueError:
        raise ValueError(f"{text!r} is not 'auto' or of the form LOW:HIGH") from None
    if not low < high:
        raise ValueError(f"empty range {text!r}")
    return low, high


@subrank.command()
@click.argument("infile", type=click.Path(exists=True, dir_okay=False))
@click.option("-m", type=int, default=None, help="Sub-sample size.")
@click.option("-b", type=int, default=None, help="Number of random sub-samples.")
@click.option("--ties", type=click.Choice(["reject", "random"]), default=None)
@click.option("--condition", default="", help='Fixed coordinates, e.g. "x3=0,x4=0".')
@click.option("--grid", "grid_spec", default=None, help="Evaluation grid, e.g. 50x50.")
@click.option("--range", "range_spec", default="auto", help="auto or LOW:HIGH.")
@click.option("--sample", "n_points", type=int, default=None, help="Emit k synthetic points.")
@click.pass_context
def regress(ctx, infile, m, b, ties, condition, grid_spec, range_spec, n_points) -> None:
    """Smooth the rank grid into a density and slice or sample it."""
    settings = _settings(ctx)
    params = settings["config"]["regress"]
    sample = read_sample(infile)
    config = _estimator_config(
        settings, _resolve(m, params["m"]), _resolve(b, params["b"]), ties, False, sample.d
    )
    model = JointDensityModel.fit(sample, config, n_jobs=settings["threads"])

    if n_points is not None:
        points = model.sample(n_points, seed=settings["seed"])
        frame = pandas.DataFrame(points, columns=[f"x{l + 1}" for l in range(sample.d)])
        _emit_frame(frame, settings["output"])
        return

    fixed = parse_condition(condition, sample.d)
    nx, ny = parse_grid(_resolve(grid_spec, settings["config"]["regress"]["grid"]))
    free = [l for l in range(sample.d) if l not in fixed]
    if len(free) != 2:
        raise click.UsageError(
            f"condition must leave exactly two free coordinates (free: {len(free)})"
        )

    x_axis = np.linspace(*parse_range(range_spec, sample.values[:, free[0]]), nx)
    y_axis = np.linspace(*parse_range(range_spec, sample.values[:, free[1]]), ny)
    values = model.conditional_slice(fixed, x_axis, y_axis)

    x, y = np.meshgrid(x_axis, y_axis, indexing="ij")
    frame = pandas.DataFrame(
        {"x": x.reshape(-1), "y": y.reshape(-1), "density": values.reshape(-1)}
    )
    _emit_frame(frame, settings["output"])


@subrank.group()
def study() -> None:
    """Run a simulation study described by a YAML or JSON file."""


def _run_study(ctx: click.Context, name: str, spec_file: str) -> None:
    settings = _settings(ctx)
    with open(spec_file) as fp:
        data = yaml.safe_load(fp) or {}
    if data.setdefault("study", name) != name:
        raise click.BadParameter(
            f"{spec_file} describes a {data['study']} study", param_hint="SPEC"
        )
    spec = ExperimentSpec.from_dict(data)

    start = time.perf_counter()
    report = run_study(spec, n_jobs=settings["threads"])
    if settings["verbose"]:
        out(f"{name} study finished in {time.perf_counter() - start:.1f} s")

    output = settings["output"] or spec.output or f"{name}-study"
    for path in report.write(output):
        out(f"Output written to {path}")
    print(report.to_frame().to_string(index=False))

    if report.failed:
        err(f"{len(report.failed)} of {len(report.rows)} rows failed")
        ctx.exit(EXIT_PARTIAL_FAILURE)


@study.command()
@click.argument("spec_file", metavar="SPEC", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def moment(ctx, spec_file) -> None:
    """Moments of the statistic against their limits."""
    _run_study(ctx, "moment", spec_file)


@study.command()
@click.argument("spec_file", metavar="SPEC", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def power(ctx, spec_file) -> None:
    """Rejection rates of the independence test."""
    _run_study(ctx, "power", spec_file)


@study.command()
@click.argument("spec_file", metavar="SPEC", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def convergence(ctx, spec_file) -> None:
    """Spread of grid cells and convergence to the copula density."""
    _run_study(ctx, "convergence", spec_file)


@subrank.command()
@click.argument(
    "infile",
    type=click.Choice(["subrank.toml", "sample.csv", "experiment.yaml"]),
)
def show(infile: str) -> None:
    """Show example input files."""
    print(_contents_of_input_file(infile))


@subrank.command()
def setup() -> None:
    """Setup a folder of input files."""
    files = [
        pathlib.Path(fname) for fname in ["sample.csv", "subrank.toml", "experiment.yaml"]
    ]

    existing_files = [str(file_) for file_ in files if file_.exists()]
    if existing_files:
        for name in existing_files:
            err(
                f"{name}: File exists."
                " Either remove and then rerun or choose a different destination folder"
            )
    else:
        for file_ in files:
            with open(file_, "w") as fp:
                print(_contents_of_input_file(file_.name), file=fp)
        print(pathlib.Path.cwd())

    if existing_files:
        sys.exit(len(existing_files))
