"""This file contains the on-disk formats: scenario files, JSON exports and the CSV formats."""

import csv
import math
import typing
from pathlib import Path

import msgspec
import numpy as np
from result import Err, Ok, Result

from ._constants import DEFAULT_DRAWS, DEFAULT_ELLIPSE_EVERY, SPEED_FLOOR
from .field import Box, EstimatorConfig, ObservationSet
from .inference import LimitLawConfig, PointTarget, PValuePoint, SphereTarget
from .sim import FIELDS, StudyResult, SyntheticScenario
from .tracker import AnalyticField, TrackConfig, Trajectory

FieldName = typing.Literal["circular", "constant", "linear", "quadratic", "crossing"]
TWO_DIMENSIONAL_FIELDS = {"circular", "crossing"}


class CsvFormatError(ValueError):
    """A CSV file is malformed; `line` is 1-based."""

    def __init__(self, message: str, line: int) -> None:
        """Prefix the message with the line number."""
        super().__init__(f"line {line}: {message}")
        self.line = line


class TrackSettings(msgspec.Struct, forbid_unknown_fields=True, kw_only=True):
    """The `track` block of a scenario file. Either h or beta > 0 must be given; h_tilde defaults to h."""

    x0: tuple[float, ...]
    T: float
    delta: float
    h: float | None = None
    beta: float = 0.0
    h_tilde: float | None = None
    speed_floor: float = SPEED_FLOOR

    def __post_init__(self) -> None:
        """Some bandwidth is needed."""
        if self.h is None and not self.beta > 0:
            raise ValueError("track settings need a bandwidth h or a calibration beta > 0")


class GridSpec(msgspec.Struct, forbid_unknown_fields=True):
    """A regular grid of `steps[i]` points per axis, corners included."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    steps: tuple[int, ...]

    def __post_init__(self) -> None:
        """Consistent dimensions, at least one point per axis."""
        if not len(self.lower) == len(self.upper) == len(self.steps):
            raise ValueError("grid lower, upper and steps must have the same length")
        if any(s < 1 for s in self.steps):
            raise ValueError("every grid axis needs at least one point")

    def points(self) -> np.ndarray:
        """All grid points, shape (prod(steps), d), first axis varying slowest."""
        axes = [np.linspace(lo, hi, s) for lo, hi, s in zip(self.lower, self.upper, self.steps)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


class Scenario(msgspec.Struct, forbid_unknown_fields=True, kw_only=True):
    """A scenario file: synthetic design, tracking settings, target and test/study settings."""

    domain: Box
    n: int
    track: TrackSettings
    target: PointTarget | SphereTarget
    field: FieldName = "circular"
    noise_scale: float = 0.5
    seed: int = 0
    alpha: float = 0.05
    replications: int = 2000
    targets: list[tuple[float, ...]] | None = None
    grid: GridSpec | None = None
    draws: int = DEFAULT_DRAWS
    standardize: bool = True
    D2_true: float = 0.0
    bias_corrected: bool = True
    ellipse_every: int = DEFAULT_ELLIPSE_EVERY
    angle: float = 135.0
    direction: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        """Cross-field checks."""
        d = self.domain.dim
        if self.field in TWO_DIMENSIONAL_FIELDS and d != 2:
            raise ValueError(f"the {self.field} field needs a two-dimensional domain")
        if self.field == "constant" and (self.direction is None or len(self.direction) != d):
            raise ValueError("the constant field needs a `direction` matching the domain dimension")
        if len(self.track.x0) != d:
            raise ValueError(f"track.x0 must have {d} coordinates")
        if len(self.target.a) != d:
            raise ValueError(f"target.a must have {d} coordinates")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.grid is not None and len(self.grid.steps) != d:
            raise ValueError(f"the grid must be {d}-dimensional")
        if self.ellipse_every < 1:
            raise ValueError("ellipse_every must be at least 1")

    @property
    def dim(self) -> int:
        """Dimension d."""
        return self.domain.dim

    def build_field(self) -> AnalyticField:
        """The analytic field named by `field`, with Σ = noise_scale² I."""
        factory = FIELDS[self.field]
        match self.field:
            case "constant":
                return factory(self.direction, noise_scale=self.noise_scale)
            case "crossing":
                return factory(angle=self.angle, noise_scale=self.noise_scale)
            case "linear" | "quadratic":
                return factory(dim=self.dim, noise_scale=self.noise_scale)
            case _:
                return factory(noise_scale=self.noise_scale)

    def estimator(self) -> EstimatorConfig:
        """Bandwidths: given h, or h = (β/n)^{1/(d+3)}."""
        settings = self.track
        if settings.h is None:
            return EstimatorConfig.from_beta(settings.beta, self.n, self.dim, h_tilde=settings.h_tilde)
        return EstimatorConfig(h=settings.h, h_tilde=settings.h_tilde or settings.h, beta=settings.beta)

    def track_config(self, n: int | None = None) -> TrackConfig:
        """Tracker settings; `n` overrides the sample size used for scaling."""
        settings = self.track
        return TrackConfig(
            x0=settings.x0,
            T=settings.T,
            delta=settings.delta,
            bandwidth=self.estimator(),
            sample_size_n=n or self.n,
            speed_floor=settings.speed_floor,
        )

    def synthetic(self) -> SyntheticScenario:
        """The sampling design."""
        return SyntheticScenario(
            field=self.build_field(), domain=self.domain, n=self.n, noise_scale=self.noise_scale, seed=self.seed
        )

    def law_config(self, workers: int = 1) -> LimitLawConfig:
        """Monte Carlo settings for the limit laws."""
        return LimitLawConfig(draws=self.draws, seed=self.seed, beta=self.track.beta, workers=workers)

    def power_targets(self) -> list[tuple[float, ...]]:
        """`targets`, falling back to the single `target` point."""
        return self.targets or [self.target.a]


scenario_decoder = msgspec.json.Decoder(type=Scenario)


def load_scenario(path: str | Path, seed: int | None = None) -> Result[Scenario, Exception]:
    """Read and validate a scenario file; `seed` overrides the file's seed."""
    path = Path(path)
    try:
        scenario = scenario_decoder.decode(path.read_bytes())
    except FileNotFoundError:
        return Err(FileNotFoundError(f"scenario file {path} does not exist"))
    except (msgspec.ValidationError, msgspec.DecodeError) as e:
        return Err(ValueError(f"invalid scenario file {path}: {e}"))

    if seed is not None:
        scenario = msgspec.structs.replace(scenario, seed=seed)
    return Ok(scenario)


def _enc_hook(obj: typing.Any) -> typing.Any:
    """Make numpy values JSON-encodable."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise NotImplementedError(f"objects of type {type(obj)} are not supported")


encoder = msgspec.json.Encoder(enc_hook=_enc_hook)


class StateRecord(msgspec.Struct):
    """One exported state."""

    k: int
    t: float
    x: list[float]
    m: list[float]
    c: list[list[float]]


class TrajectoryMetadata(msgspec.Struct, kw_only=True):
    """Settings and outcome of a tracking run."""

    delta: float
    T: float
    h: float
    h_tilde: float
    beta: float
    n: int
    volume: float
    stopped_early: bool
    stop_reason: str


class TrajectoryExport(msgspec.Struct, kw_only=True):
    """The JSON form of a trajectory."""

    metadata: TrajectoryMetadata
    states: list[StateRecord]
    warnings: list[str] = msgspec.field(default_factory=list)


def trajectory_export(traj: Trajectory) -> TrajectoryExport:
    """Convert a trajectory into its exported form."""
    cfg = traj.config
    return TrajectoryExport(
        metadata=TrajectoryMetadata(
            delta=cfg.delta,
            T=cfg.T,
            h=cfg.bandwidth.h,
            h_tilde=cfg.bandwidth.h_tilde,
            beta=cfg.bandwidth.beta,
            n=traj.n,
            volume=traj.volume,
            stopped_early=traj.stopped_early,
            stop_reason=traj.stop_reason,
        ),
        states=[
            StateRecord(k=s.k, t=s.t, x=s.x_hat.tolist(), m=s.m_hat.tolist(), c=s.c_hat.tolist())
            for s in traj.states
        ],
        warnings=list(traj.warnings),
    )


def write_json(obj: typing.Any, path: str | Path) -> Path:
    """Encode any struct (numpy fields included) to a JSON file."""
    path = Path(path)
    if isinstance(obj, Trajectory):
        obj = trajectory_export(obj)
    path.write_bytes(encoder.encode(obj))
    return path


def read_trajectory_json(path: str | Path) -> TrajectoryExport:
    """Read an exported trajectory back."""
    return msgspec.json.decode(Path(path).read_bytes(), type=TrajectoryExport)


def _header(d: int) -> list[str]:
    return [f"x{i}" for i in range(1, d + 1)] + [f"v{i}" for i in range(1, d + 1)]


def _parse_row(row: list[str], width: int, line: int) -> list[float]:
    if len(row) != width:
        raise CsvFormatError(f"expected {width} fields, got {len(row)}", line)
    try:
        values = [float(field) for field in row]
    except ValueError as e:
        raise CsvFormatError(str(e), line) from e
    if not all(math.isfinite(v) for v in values):
        raise CsvFormatError("NaN and infinite values are not allowed", line)
    return values


def _parse_observations(path: Path, domain: Box | None) -> ObservationSet:
    with path.open(newline="") as f:
        rows = csv.reader(f)
        header = next(rows, None)
        if not header:
            raise CsvFormatError("missing header row", 1)
        header = [name.strip() for name in header]
        if len(header) % 2 or header != _header(len(header) // 2):
            raise CsvFormatError(f"header must read x1..xd,v1..vd, got {','.join(header)}", 1)
        d = len(header) // 2
        if domain is not None and domain.dim != d:
            raise CsvFormatError(f"file is {d}-dimensional but the domain is {domain.dim}-dimensional", 1)

        data = [_parse_row(row, 2 * d, line) for line, row in enumerate(rows, start=2) if row]

    if not data:
        raise CsvFormatError("no observations", 2)
    array = np.array(data, dtype=np.float64)
    points, values = array[:, :d], array[:, d:]
    if domain is None:
        domain = Box(lower=tuple(points.min(axis=0).tolist()), upper=tuple(points.max(axis=0).tolist()))
    return ObservationSet(points=points, values=values, domain=domain)


def read_observations_csv(path: str | Path, domain: Box | None = None) -> Result[ObservationSet, Exception]:
    """
    Read `x1,...,xd,v1,...,vd` rows into an observation set.

    The design box comes from the scenario; without one the bounding box of the points is used.
    """
    path = Path(path)
    try:
        return Ok(_parse_observations(path, domain))
    except FileNotFoundError:
        return Err(FileNotFoundError(f"observation file {path} does not exist"))
    except ValueError as e:
        return Err(e)


def _write_rows(path: str | Path, header: list[str], rows: typing.Iterable[typing.Iterable[float]]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows([repr(float(v)) for v in row] for row in rows)
    return path


def write_observations_csv(obs: ObservationSet, path: str | Path) -> Path:
    """Write observations so that reading them back gives the same numbers."""
    return _write_rows(path, _header(obs.dim), np.hstack([obs.points, obs.values]))


def write_pvalue_csv(entries: list[PValuePoint], path: str | Path) -> Path:
    """p-value map as `x1,...,xd,p`."""
    if not entries:
        raise ValueError("the p-value map is empty")
    d = len(entries[0].point)
    header = [f"x{i}" for i in range(1, d + 1)] + ["p"]
    return _write_rows(path, header, ([*entry.point, entry.p_value] for entry in entries))


def write_study_csv(study: StudyResult, path: str | Path) -> Path:
    """Power studies: one row per target; distance studies: one statistic per replication."""
    if study.empirical_power is not None and study.targets:
        d = len(study.targets[0])
        header = [f"x{i}" for i in range(1, d + 1)] + ["distance", "empirical_power", "theoretical_power"]
        rows = (
            [*a, dist, emp, theo]
            for a, dist, emp, theo in zip(
                study.targets, study.target_distances or [], study.empirical_power, study.theoretical_power or []
            )
        )
        return _write_rows(path, header, rows)
    return _write_rows(path, ["statistic"], ([s] for s in study.statistics))
