"""This file builds the Typer cli."""

import enum
import sys
from pathlib import Path
from typing import Annotated, Optional

import numpy as np
import rich
import scipy
import typer
from result import Err, Ok, Result

from .__about__ import __version__
from ._cli_support import State
from .core import gen_data, mc_study, pmap, power_curve, run_test, track

app = typer.Typer()
state = State()


class OutputFormat(str, enum.Enum):
    """File formats for --format."""

    csv = "csv"
    json = "json"
    svg = "svg"


def output(result: Result[str, Exception]) -> None:
    """Output positive (ok) result to stdout and error result to stderr (exit code 1)."""
    match result:
        case Ok(msg):
            if msg:
                rich.print(msg)
        case Err(err):
            rich.print(f"[red]{type(err).__name__}: {err}[/red]", file=sys.stderr)
            raise typer.Exit(code=1)


OptionConfig = Annotated[Path, typer.Option("--config", "-c", help="Scenario file (JSON)")]
OptionOut = Annotated[Path, typer.Option("--out", "-o", help="Output file")]
OptionMaybeOut = Annotated[Optional[Path], typer.Option("--out", "-o", help="Output file (default: stdout)")]
OptionSeed = Annotated[Optional[int], typer.Option("--seed", min=0, max=2**64 - 1, help="Override the scenario seed")]
OptionData = Annotated[
    Optional[Path], typer.Option("--data", help="Observation CSV (x1..xd,v1..vd) instead of sampling the scenario")
]


@app.command(name="gen-data")
def gen_data_command(config: OptionConfig, out: OptionOut, seed: OptionSeed = None):
    """Sample the scenario's observations and write them as CSV."""
    output(gen_data(config, out, seed=seed))


@app.command(name="track")
def track_command(
    config: OptionConfig,
    out: OptionMaybeOut = None,
    seed: OptionSeed = None,
    fmt: Annotated[OutputFormat, typer.Option("--format", help="json or svg")] = OutputFormat.json,
    data: OptionData = None,
):
    """Track the integral curve with its bias and covariance."""
    output(track(config, out, seed=seed, fmt=fmt.value, data=data))


@app.command(name="test")
def test_command(config: OptionConfig, out: OptionMaybeOut = None, seed: OptionSeed = None, data: OptionData = None):
    """Test whether the true curve reaches the scenario's target."""
    output(run_test(config, out, seed=seed, data=data))


@app.command(name="mc-study")
def mc_study_command(
    config: OptionConfig,
    out: OptionOut,
    seed: OptionSeed = None,
    fmt: Annotated[OutputFormat, typer.Option("--format")] = OutputFormat.json,
):
    """Monte Carlo distribution of the distance statistic."""
    output(mc_study(config, out, seed=seed, fmt=fmt.value))


@app.command(name="power-curve")
def power_curve_command(
    config: OptionConfig,
    out: OptionOut,
    seed: OptionSeed = None,
    fmt: Annotated[OutputFormat, typer.Option("--format")] = OutputFormat.json,
):
    """Empirical vs asymptotic power along the scenario's targets."""
    output(power_curve(config, out, seed=seed, fmt=fmt.value))


@app.command(name="p-map")
def pmap_command(
    config: OptionConfig,
    out: OptionOut,
    seed: OptionSeed = None,
    fmt: Annotated[OutputFormat, typer.Option("--format")] = OutputFormat.csv,
    data: OptionData = None,
):
    """p-value map on the scenario's grid."""
    output(pmap(config, out, seed=seed, fmt=fmt.value, data=data))


def version_callback():
    """Show the current versions when running with --version."""
    rich.print("fibertrack", __version__)
    if state.verbose:
        rich.print("numpy", np.__version__)
        rich.print("scipy", scipy.__version__)
        rich.print("Python", sys.version.split(" ")[0], sys.executable)


@app.callback(invoke_without_command=True, no_args_is_help=True)
def main(
    ctx: typer.Context,
    verbose: bool = False,
    workers: Annotated[int, typer.Option(min=1, help="Threads for Monte Carlo work")] = 1,
    # stops the program:
    version: bool = False,
) -> None:  # noqa
    """
    This callback will run before every command, setting the right global flags.

    Args:
        ctx: context to determine if a subcommand is passed, etc
        verbose: show more info in supported subcommands?
        workers: number of threads used for limit-law draws and replications
        version: display current version?

    """
    state.verbose = verbose
    state.workers = workers

    if version:
        version_callback()
        raise typer.Exit()
    elif not ctx.invoked_subcommand:
        rich.print("[yellow]Missing subcommand. Try `fibertrack --help` for more info.[/yellow]")


def parse_and_dispatch(argv: list[str]) -> int:
    """Run the cli on `argv` and return its exit code (0 ok, 1 failure, 2 usage error)."""
    try:
        app(args=argv, prog_name="fibertrack")
    except SystemExit as e:
        match e.code:
            case None:
                return 0
            case int(code):
                return code
            case _:
                return 1
    except Exception as e:
        rich.print(f"[red]{type(e).__name__}: {e}[/red]", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    app()
