"""
Synthetic vector fields, seeded observation sampling and Monte Carlo studies of the test statistics.

Random streams: observations of replication r use substream (seed, 0, r); limit-law draws of replication r use the
seed derived from (seed, 1, r). Results therefore do not depend on the number of worker threads.
"""

import math
import typing

import msgspec
import numpy as np
import threadful
from scipy import integrate, optimize

from ._constants import DEFAULT_STUDY_DRAWS, HISTOGRAM_BINS, ON_CURVE_TOL
from ._rng import derive_seed, substream
from ._typing import Matrix, Points, Tensor3, Vector, as_vector
from .field import Box, DomainError, ObservationSet
from .inference import (
    KSResult,
    LimitLawConfig,
    PointTarget,
    SphereTarget,
    ci_distance_normal,
    ks_test,
    ks_two_sample,
    min_sq_distance,
    power_theoretical,
    sample_chi2type_law,
    sample_tangent_sphere_law,
    test_point_reach,
)
from .tracker import AnalyticField, TrackConfig, Trajectory, track_curve, track_reference

T = typing.TypeVar("T")

STREAM_OBSERVATIONS = 0
STREAM_LAW = 1

ROTATION = np.array([[0.0, -1.0], [1.0, 0.0]])


def _radii(x: np.ndarray) -> np.ndarray:
    radii = np.linalg.norm(x, axis=-1)
    if np.any(radii == 0.0):
        raise DomainError("the circular field is singular at the origin")
    return radii


def circular_field(x: typing.Any) -> Vector | Points:
    """v(x, y) = (-y, x)/√(x² + y²): unit speed, counterclockwise around the origin. Accepts (2,) or (n, 2)."""
    points = np.asarray(x, dtype=np.float64)
    if points.shape[-1] != 2:
        raise ValueError(f"the circular field is two-dimensional, got shape {points.shape}")
    return (points @ ROTATION.T) / _radii(points)[..., None]


def circular_jacobian(x: typing.Any) -> Matrix:
    """[l, j] = ∂v_l/∂x_j = J_lj/r - (Jx)_l x_j/r³."""
    point = as_vector(x)
    r = float(_radii(point))
    rotated = ROTATION @ point
    return ROTATION / r - np.outer(rotated, point) / r**3


def circular_second(x: typing.Any) -> Tensor3:
    """[j, k, l] = ∂²v_l/∂x_j∂x_k."""
    point = as_vector(x)
    r = float(_radii(point))
    rotated = ROTATION @ point
    eye = np.eye(2)
    return (
        -np.einsum("lj,k->jkl", ROTATION, point) / r**3
        - np.einsum("lk,j->jkl", ROTATION, point) / r**3
        - np.einsum("jk,l->jkl", eye, rotated) / r**3
        + 3 * np.einsum("j,k,l->jkl", point, point, rotated) / r**5
    )


def circular(noise_scale: float = 0.0) -> AnalyticField:
    """The circular field with its analytic derivatives; Σ = noise_scale² I."""
    return AnalyticField(
        name="circular",
        v=circular_field,
        v_prime=circular_jacobian,
        v_second=circular_second,
        sigma=noise_scale**2 * np.eye(2),
    )


def constant(direction: typing.Any, noise_scale: float = 0.0) -> AnalyticField:
    """v(x) = direction everywhere."""
    u = as_vector(direction)
    d = len(u)
    return AnalyticField(
        name="constant",
        v=lambda x: np.broadcast_to(u, np.shape(x)).copy(),
        v_prime=lambda x: np.zeros((d, d)),
        v_second=lambda x: np.zeros((d, d, d)),
        sigma=noise_scale**2 * np.eye(d),
    )


def linear(dim: int = 2, noise_scale: float = 0.0) -> AnalyticField:
    """v(x) = x."""
    return AnalyticField(
        name="linear",
        v=lambda x: np.array(x, dtype=np.float64),
        v_prime=lambda x: np.eye(dim),
        v_second=lambda x: np.zeros((dim, dim, dim)),
        sigma=noise_scale**2 * np.eye(dim),
    )


def quadratic(dim: int = 2, noise_scale: float = 0.0) -> AnalyticField:
    """v(x) = (x₁², 0, ...); its second-derivative trace is (2, 0, ...)."""

    def v(x: typing.Any) -> np.ndarray:
        points = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(points)
        out[..., 0] = points[..., 0] ** 2
        return out

    def v_prime(x: typing.Any) -> Matrix:
        jac = np.zeros((dim, dim))
        jac[0, 0] = 2 * as_vector(x)[0]
        return jac

    def v_second(x: typing.Any) -> Tensor3:
        second = np.zeros((dim, dim, dim))
        second[0, 0, 0] = 2.0
        return second

    return AnalyticField(name="quadratic", v=v, v_prime=v_prime, v_second=v_second, sigma=noise_scale**2 * np.eye(dim))


def crossing(angle: float = 135.0, noise_scale: float = 0.0) -> AnalyticField:
    """
    Two unit line fields through the origin, along e₁ and along (cos θ, sin θ) (θ in degrees).

    Every point takes the direction of the nearer line, so the field is piecewise constant and its derivatives vanish
    away from the switching rays.
    """
    theta = math.radians(angle)
    directions = np.array([[1.0, 0.0], [math.cos(theta), math.sin(theta)]])

    def v(x: typing.Any) -> np.ndarray:
        points = np.asarray(x, dtype=np.float64)
        along = points @ directions.T
        # squared distance to each line: |x|² - (x·u)²
        gaps = np.sum(points * points, axis=-1)[..., None] - along * along
        nearest = np.argmin(gaps, axis=-1)
        return directions[nearest]

    return AnalyticField(
        name="crossing",
        v=v,
        v_prime=lambda x: np.zeros((2, 2)),
        v_second=lambda x: np.zeros((2, 2, 2)),
        sigma=noise_scale**2 * np.eye(2),
    )


class SyntheticScenario(msgspec.Struct, frozen=True, kw_only=True):
    """An analytic field sampled at n uniform design points in a box, observed with additive N(0, s²I) noise."""

    field: AnalyticField
    domain: Box
    n: int
    noise_scale: float
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate sample size, noise and dimension."""
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if not self.noise_scale >= 0:
            raise ValueError(f"noise_scale must be nonnegative, got {self.noise_scale}")
        if self.field.dim != self.domain.dim:
            raise ValueError(f"{self.field.name} field is {self.field.dim}-dimensional, domain is {self.domain.dim}")

    @property
    def reference_field(self) -> AnalyticField:
        """The field with Σ set to the scenario's noise covariance."""
        return msgspec.structs.replace(self.field, sigma=self.noise_scale**2 * np.eye(self.domain.dim))


class Histogram(msgspec.Struct, frozen=True):
    """Binned counts; len(edges) == len(counts) + 1."""

    edges: Vector
    counts: Vector


class StudyResult(msgspec.Struct, kw_only=True):
    """Summary of N Monte Carlo replications."""

    replications: int
    statistics: Vector
    histogram: Histogram
    law: typing.Literal["normal", "chi2type", "tangent_sphere"]
    ks: KSResult | None = None
    reference_samples: Vector | None = None
    reference_ks: KSResult | None = None
    targets: list[tuple[float, ...]] | None = None
    target_distances: list[float] | None = None
    empirical_power: list[float] | None = None
    theoretical_power: list[float] | None = None
    alpha: float | None = None
    sigma_hat_mean: float | None = None
    oracle_sigma: float | None = None
    warnings: int = 0


def sample_observations(sc: SyntheticScenario, replication: int = 0) -> ObservationSet:
    """n uniform design points in the box, V_i = v(X_i) + noise_scale·Z_i, fully determined by (seed, replication)."""
    rng = substream(sc.seed, STREAM_OBSERVATIONS, replication)
    lower, upper = np.asarray(sc.domain.lower), np.asarray(sc.domain.upper)
    points = rng.uniform(lower, upper, size=(sc.n, sc.domain.dim))
    noise = rng.standard_normal((sc.n, sc.domain.dim))
    values = np.asarray(sc.field.v(points), dtype=np.float64) + sc.noise_scale * noise
    return ObservationSet(points=points, values=values, domain=sc.domain)


def true_curve(field: AnalyticField, x0: typing.Any, times: typing.Any) -> Points:
    """x(t) at the given times, integrated to high accuracy."""
    t_eval = np.asarray(times, dtype=np.float64)
    solution = integrate.solve_ivp(
        lambda _, x: np.asarray(field.v(x), dtype=np.float64),
        (0.0, float(t_eval[-1])),
        as_vector(x0),
        t_eval=t_eval,
        rtol=1e-10,
        atol=1e-12,
    )
    if not solution.success:
        raise DomainError(f"integrating the {field.name} field failed: {solution.message}")
    return solution.y.T


def true_distance(field: AnalyticField, x0: typing.Any, T: float, target: PointTarget, grid: int = 2001) -> float:
    """min over t ∈ [0, T] of |x(t) - a|, refined between grid points."""
    times = np.linspace(0.0, T, grid)
    curve = true_curve(field, x0, times)
    values = target.path_values(curve)
    k = int(np.argmin(values))
    lo, hi = times[max(k - 1, 0)], times[min(k + 1, grid - 1)]
    if hi <= lo:
        return math.sqrt(float(values[k]))

    def gap(t: float) -> float:
        return float(target.path_values(true_curve(field, x0, [t])[-1][None, :])[0])

    refined = optimize.minimize_scalar(gap, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return math.sqrt(max(min(float(refined.fun), float(values[k])), 0.0))


def power_targets(radius: float = 1.0, count: int = 10, max_distance: float = 1.0) -> list[tuple[float, ...]]:
    """`count` points on the outward normal at the top (0, radius) of a circle, from on-curve to max_distance away."""
    if count < 2:
        raise ValueError("a power curve needs at least two targets")
    return [(0.0, radius + j * max_distance / (count - 1)) for j in range(count)]


def _map_ordered(fn: typing.Callable[[int], T], count: int, workers: int) -> list[T]:
    """fn(0), ..., fn(count - 1), run on up to `workers` threads, results in index order."""
    if workers <= 1:
        return [fn(i) for i in range(count)]
    worker = threadful.thread(fn)
    out: list[T] = []
    for start in range(0, count, workers):
        batch = [worker(i) for i in range(start, min(start + workers, count))]
        out.extend(job.join() for job in batch)
    return out


def _histogram(statistics: Vector) -> Histogram:
    counts, edges = np.histogram(statistics, bins=HISTOGRAM_BINS)
    return Histogram(edges=edges, counts=counts.astype(np.float64))


def _check_replications(N: int) -> None:
    if N < 100:
        raise ValueError(f"a Monte Carlo study needs at least 100 replications, got {N}")


def _reference_samples(
    sc: SyntheticScenario, track_cfg: TrackConfig, target: PointTarget | SphereTarget, draws: int
) -> Vector:
    """Draws from the null law evaluated on the true curve, bias and covariance."""
    ref = track_reference(sc.reference_field, track_cfg, volume=sc.domain.volume)
    _, k = min_sq_distance(ref, target)
    state = ref.states[k]
    cfg = LimitLawConfig(draws=draws, seed=derive_seed(sc.seed, STREAM_LAW), beta=track_cfg.bandwidth.beta)
    match target:
        case SphereTarget():
            return sample_tangent_sphere_law(state.m_hat, state.c_hat, target.normal(state.x_hat), cfg)
        case _:
            return sample_chi2type_law(state.m_hat, state.c_hat, state.v_hat, cfg)


def mc_distance_study(
    sc: SyntheticScenario,
    track_cfg: TrackConfig,
    target: PointTarget | SphereTarget,
    D2_true: float,
    N: int,
    standardize: bool,
    workers: int = 1,
    reference_draws: int = DEFAULT_STUDY_DRAWS,
) -> StudyResult:
    """
    Distribution of the minimal squared distance over N fresh samples.

    standardize=True: z = √(nh^{d-1})(D̂² - D²)/σ̂ per replication, compared with N(0, 1) by KS.
    standardize=False: nh^{d-1}D̂² per replication, compared with draws of the null law on the true curve by a
    two-sample KS.
    """
    _check_replications(N)
    d = sc.domain.dim
    h = track_cfg.bandwidth.h
    beta = track_cfg.bandwidth.beta
    n = track_cfg.sample_size_n or sc.n

    def replicate(rep: int) -> tuple[float, float, int]:
        traj = track_curve(sample_observations(sc, rep), track_cfg)
        if standardize:
            interval = ci_distance_normal(traj, target, D2_true, 0.05, n, h, d, beta)
            if interval.degenerate or interval.z is None:
                raise DomainError(f"replication {rep}: the standardised distance is degenerate (σ̂ = 0 or D̂² = 0)")
            return interval.z, interval.sigma_hat, len(traj.warnings)
        d2, _ = min_sq_distance(traj, target)
        return n * h ** (d - 1) * d2, math.nan, len(traj.warnings)

    outcomes = _map_ordered(replicate, N, workers)
    statistics = np.array([value for value, _, _ in outcomes])
    warnings = sum(count for _, _, count in outcomes)
    ordered = np.sort(statistics)

    if standardize:
        # σ̂ is a plug-in; σ from the true curve shows how far it is off
        ref = track_reference(sc.reference_field, track_cfg, volume=sc.domain.volume)
        oracle = ci_distance_normal(ref, target, D2_true, 0.05, n, h, d, beta)
        return StudyResult(
            replications=N,
            statistics=statistics,
            histogram=_histogram(ordered),
            law="normal",
            ks=ks_test(ordered),
            sigma_hat_mean=float(np.mean([sigma for _, sigma, _ in outcomes])),
            oracle_sigma=oracle.sigma_hat,
            warnings=warnings,
        )

    reference = _reference_samples(sc, track_cfg, target, reference_draws)
    return StudyResult(
        replications=N,
        statistics=statistics,
        histogram=_histogram(ordered),
        law="tangent_sphere" if isinstance(target, SphereTarget) else "chi2type",
        reference_samples=reference,
        reference_ks=ks_two_sample(ordered, reference),
        warnings=warnings,
    )


def mc_power_study(
    sc: SyntheticScenario,
    track_cfg: TrackConfig,
    targets: list[tuple[float, ...]],
    alpha: float,
    N: int,
    workers: int = 1,
    draws: int = DEFAULT_STUDY_DRAWS,
) -> StudyResult:
    """
    Rejection frequency of the point-reach test per target over N fresh samples.

    The theoretical power per target is the mean over replications of the asymptotic power formula, evaluated at the
    true distance with each replication's M̂, Ĉ and critical value; on-curve targets get α.
    `statistics` holds Λ̂ for the first target.
    """
    _check_replications(N)
    if not targets:
        raise ValueError("a power study needs at least one target")
    d = sc.domain.dim
    h = track_cfg.bandwidth.h
    beta = track_cfg.bandwidth.beta
    n = track_cfg.sample_size_n or sc.n
    distances = [true_distance(sc.field, track_cfg.x0, track_cfg.T, PointTarget(a=tuple(a))) for a in targets]

    def replicate(rep: int) -> tuple[list[bool], list[float], float, int]:
        traj = track_curve(sample_observations(sc, rep), track_cfg)
        law_cfg = LimitLawConfig(draws=draws, seed=derive_seed(sc.seed, STREAM_LAW, rep), beta=beta)
        rejections, powers = [], []
        first = math.nan
        for j, (a, distance) in enumerate(zip(targets, distances)):
            report = test_point_reach(traj, a, alpha, n, h, d, law_cfg)
            if j == 0:
                first = report.statistic
            rejections.append(report.reject)
            if distance <= ON_CURVE_TOL:
                powers.append(alpha)
                continue
            state = traj.states[report.k_hat]
            gap = state.x_hat - as_vector(a)
            norm = float(np.linalg.norm(gap))
            normal = gap / norm if norm > 0 else np.eye(d)[0]
            powers.append(
                power_theoretical(distance, report.critical_value, n, h, d, beta, state.m_hat, state.c_hat, normal)
            )
        return rejections, powers, first, len(traj.warnings)

    outcomes = _map_ordered(replicate, N, workers)
    rejections = np.array([r for r, _, _, _ in outcomes], dtype=np.float64)
    powers = np.array([p for _, p, _, _ in outcomes], dtype=np.float64)
    statistics = np.array([s for _, _, s, _ in outcomes])

    return StudyResult(
        replications=N,
        statistics=statistics,
        histogram=_histogram(np.sort(statistics)),
        law="chi2type",
        targets=[tuple(float(c) for c in a) for a in targets],
        target_distances=distances,
        empirical_power=[float(f) for f in rejections.mean(axis=0)],
        theoretical_power=[float(p) for p in powers.mean(axis=0)],
        alpha=alpha,
        warnings=sum(w for _, _, _, w in outcomes),
    )


FIELDS: dict[str, typing.Callable[..., AnalyticField]] = {
    "circular": circular,
    "constant": constant,
    "linear": linear,
    "quadratic": quadratic,
    "crossing": crossing,
}


def tracking_error(traj: Trajectory, field: AnalyticField) -> float:
    """max_k |X̂_k - x(t_k)| against the accurately integrated true curve."""
    curve = true_curve(field, traj.config.x0, traj.times)
    return float(np.max(np.linalg.norm(traj.xs - curve, axis=1)))
