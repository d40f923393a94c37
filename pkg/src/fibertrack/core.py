"""Core functionality: scenario-level pipeline steps behind the cli commands."""

import sys
import typing
from pathlib import Path

from result import Err, Ok, Result
from threadful import thread
from threadful.bonus import animate

from ._cli_support import State, format_report, info, warn
from .field import ObservationSet
from .formats import (
    Scenario,
    encoder,
    load_scenario,
    read_observations_csv,
    trajectory_export,
    write_json,
    write_observations_csv,
    write_pvalue_csv,
    write_study_csv,
)
from .inference import PointTarget, TestReport, pvalue_map, test_point_reach, test_sphere_reach
from .plots import emit_plot
from .sim import mc_distance_study, mc_power_study, sample_observations, true_curve
from .tracker import Trajectory, track_curve

Format = typing.Literal["csv", "json", "svg"]

# everything numerical raises a ValueError subclass (numpy's LinAlgError included)
NUMERICAL_ERRORS = (ValueError, ArithmeticError, OSError)


def _observations(scenario: Scenario, data: Path | None) -> Result[ObservationSet, Exception]:
    if data is not None:
        return read_observations_csv(data, scenario.domain)
    try:
        return Ok(sample_observations(scenario.synthetic()))
    except NUMERICAL_ERRORS as e:
        return Err(e)


def _check_format(fmt: Format, allowed: tuple[str, ...], what: str) -> Result[Format, Exception]:
    if fmt not in allowed:
        return Err(ValueError(f"{what} can be written as {' or '.join(allowed)}, not {fmt}"))
    return Ok(fmt)


def _report_trajectory(traj: Trajectory) -> None:
    for message in traj.warnings:
        warn(message)
    if traj.stopped_early:
        warn(f"tracking stopped early at t={traj.states[-1].t:.3f} ({traj.stop_reason})")
    info(f"tracked {len(traj)} states, final point {traj.states[-1].x_hat.round(4).tolist()}")


def _print_json(obj: typing.Any) -> str:
    # unwrapped, straight to stdout
    sys.stdout.write(encoder.encode(obj).decode() + "\n")
    return ""


def _scenario_and_trajectory(
    config: Path, seed: int | None, data: Path | None
) -> Result[tuple[Scenario, ObservationSet, Trajectory], Exception]:
    match load_scenario(config, seed):
        case Err(e):
            return Err(e)
        case Ok(scenario):
            ...

    match _observations(scenario, data):
        case Err(e):
            return Err(e)
        case Ok(obs):
            ...

    try:
        traj = track_curve(obs, scenario.track_config(n=obs.n))
    except NUMERICAL_ERRORS as e:
        return Err(e)

    _report_trajectory(traj)
    return Ok((scenario, obs, traj))


def gen_data(config: Path, out: Path, seed: int | None = None) -> Result[str, Exception]:
    """Sample a scenario's observations and write them as CSV."""
    match load_scenario(config, seed):
        case Err(e):
            return Err(e)
        case Ok(scenario):
            ...

    try:
        obs = sample_observations(scenario.synthetic())
        write_observations_csv(obs, out)
    except NUMERICAL_ERRORS as e:
        return Err(e)

    return Ok(f"🎲 {obs.n} observations of the {scenario.field} field written to {out}")


def track(
    config: Path, out: Path | None = None, seed: int | None = None, fmt: Format = "json", data: Path | None = None
) -> Result[str, Exception]:
    """Track the curve and export it as JSON, or as an SVG figure with confidence ellipses."""
    match _check_format(fmt, ("json", "svg"), "trajectories"):
        case Err(e):
            return Err(e)

    match _scenario_and_trajectory(config, seed, data):
        case Err(e):
            return Err(e)
        case Ok((scenario, _, traj)):
            ...

    if out is None:
        if fmt == "svg":
            return Err(ValueError("svg output needs --out"))
        return Ok(_print_json(trajectory_export(traj)))

    try:
        if fmt == "svg":
            reference = true_curve(scenario.build_field(), scenario.track.x0, traj.times) if data is None else None
            emit_plot(
                traj,
                out,
                every=scenario.ellipse_every,
                alpha=scenario.alpha,
                bias_corrected=scenario.bias_corrected,
                reference=reference,
            )
        else:
            write_json(traj, out)
    except NUMERICAL_ERRORS as e:
        return Err(e)

    return Ok(f"📈 trajectory with {len(traj)} states written to {out}")


def run_test(
    config: Path, out: Path | None = None, seed: int | None = None, data: Path | None = None
) -> Result[str, Exception]:
    """Test whether the true curve reaches the scenario's target (point or sphere)."""
    match _scenario_and_trajectory(config, seed, data):
        case Err(e):
            return Err(e)
        case Ok((scenario, obs, traj)):
            ...

    h = scenario.estimator().h
    law = scenario.law_config(workers=State().workers)
    try:
        job = (
            thread(test_point_reach)(traj, scenario.target.a, scenario.alpha, obs.n, h, obs.dim, law)
            if isinstance(scenario.target, PointTarget)
            else thread(test_sphere_reach)(traj, scenario.target, scenario.alpha, obs.n, h, obs.dim, law)
        )
        report: TestReport = animate(job, text=f"sampling {law.draws} draws of the limit law")
        if out is not None:
            write_json(report, out)
    except NUMERICAL_ERRORS as e:
        return Err(e)

    verdict = "[red]reject[/red]" if report.reject else "[green]accept[/green]"
    summary = format_report(
        {
            "statistic": report.statistic,
            "critical value": report.critical_value,
            "p": report.p_value,
            "tau": report.tau_hat,
        }
    )
    where = f", report written to {out}" if out is not None else ""
    return Ok(f"{verdict} | {summary}{where}")


def _write_output(obj: typing.Any, out: Path, fmt: Format) -> Path:
    match fmt:
        case "svg":
            return emit_plot(obj, out)
        case "json":
            return write_json(obj, out)
        case _ if isinstance(obj, list):
            return write_pvalue_csv(obj, out)
        case _:
            return write_study_csv(obj, out)


def mc_study(config: Path, out: Path, seed: int | None = None, fmt: Format = "json") -> Result[str, Exception]:
    """Monte Carlo distribution of the distance statistic (standardised or raw)."""
    match load_scenario(config, seed):
        case Err(e):
            return Err(e)
        case Ok(scenario):
            ...

    try:
        job = thread(mc_distance_study)(
            scenario.synthetic(),
            scenario.track_config(),
            scenario.target,
            scenario.D2_true,
            scenario.replications,
            scenario.standardize,
            workers=State().workers,
        )
        study = animate(job, text=f"running {scenario.replications} replications")
        _write_output(study, out, fmt)
    except NUMERICAL_ERRORS as e:
        return Err(e)

    if study.warnings:
        warn(f"{study.warnings} covariance warnings across replications")
    ks = study.ks or study.reference_ks
    details = format_report({"KS statistic": ks.stat, "KS p": ks.p}) if ks else ""
    return Ok(f"🎯 {study.replications} replications written to {out} | {details}")


def power_curve(config: Path, out: Path, seed: int | None = None, fmt: Format = "json") -> Result[str, Exception]:
    """Empirical and asymptotic power of the point-reach test along the scenario's targets."""
    match load_scenario(config, seed):
        case Err(e):
            return Err(e)
        case Ok(scenario):
            ...

    try:
        job = thread(mc_power_study)(
            scenario.synthetic(),
            scenario.track_config(),
            scenario.power_targets(),
            scenario.alpha,
            scenario.replications,
            workers=State().workers,
            draws=scenario.draws,
        )
        study = animate(job, text=f"running {scenario.replications} replications")
        _write_output(study, out, fmt)
    except NUMERICAL_ERRORS as e:
        return Err(e)

    rows = zip(study.target_distances or [], study.empirical_power or [], study.theoretical_power or [])
    for distance, emp, theo in rows:
        info(format_report({"D": distance, "empirical": emp, "asymptotic": theo}))
        if distance > 0 and theo < emp - 0.1:
            warn(f"asymptotic power {theo:.3f} is below the empirical power {emp:.3f} at D={distance:.3f}")
    return Ok(f"⚡ power at {len(study.empirical_power or [])} targets written to {out}")


def pmap(
    config: Path, out: Path, seed: int | None = None, fmt: Format = "csv", data: Path | None = None
) -> Result[str, Exception]:
    """p-value of 'the curve passes through this point' on the scenario's grid."""
    match _scenario_and_trajectory(config, seed, data):
        case Err(e):
            return Err(e)
        case Ok((scenario, obs, traj)):
            ...

    if scenario.grid is None:
        return Err(ValueError(f"{config} has no `grid` for the p-value map"))

    law = scenario.law_config(workers=State().workers)
    try:
        job = thread(pvalue_map)(
            traj, scenario.grid.points(), scenario.alpha, obs.n, scenario.estimator().h, obs.dim, law
        )
        entries = animate(job, text="computing p-values")
        _write_output(entries, out, fmt)
    except NUMERICAL_ERRORS as e:
        return Err(e)

    significant = sum(e.p_value > scenario.alpha for e in entries)
    return Ok(f"🗺️ {len(entries)} p-values written to {out} ({significant} above alpha={scenario.alpha})")
