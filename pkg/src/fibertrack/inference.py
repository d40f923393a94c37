"""
Inference on tracked curves: distances to targets, limit-law samplers and the tests built on them.

Scaling conventions: with s = nh^{d-1}, the point/sphere statistics are s·min d² (χ²-type null laws) and the
normal-regime statistics are √s·(min d² - D²).
"""

import math
import typing

import msgspec
import numpy as np
import threadful
from scipy import stats

from ._constants import (
    CHUNK_DRAWS,
    DEFAULT_DRAWS,
    GRAD_FLOOR_NOISE_FACTOR,
    GRAD_FLOOR_RELATIVE,
    MIN_DRAWS,
    PSD_RELATIVE_TOL,
    UNCERTAIN_BAND_FACTOR,
    VANISHING_CURVATURE_TOL,
)
from ._rng import substream
from ._typing import Matrix, Points, Vector, as_vector
from .field import KERNELS, DomainError, EstimatorConfig, ObservationSet, nw_estimate, noise_cov_estimate
from .tracker import Trajectory, tied_minima

Law = typing.Literal["chi2type", "tangent_sphere", "normal"]


class NotPSDError(ValueError):
    """A covariance matrix has a negative eigenvalue beyond tolerance."""


class MultipleMinimaError(ValueError):
    """The minimum along the path is attained at more than one state."""


class PointTarget(msgspec.Struct, frozen=True, tag="point", tag_field="kind"):
    """Γ = {a}."""

    a: tuple[float, ...]

    def path_values(self, xs: Points) -> Vector:
        """|x - a|² per row."""
        gaps = np.atleast_2d(xs) - np.asarray(self.a)
        return np.sum(gaps * gaps, axis=1)

    def as_functional(self) -> "FunctionalTarget":
        """φ(x) = |x - a|² with its derivatives."""
        a = np.asarray(self.a, dtype=np.float64)
        return FunctionalTarget(
            phi=lambda x: float(self.path_values(as_vector(x)[None, :])[0]),
            phi_grad=lambda x: 2 * (as_vector(x) - a),
            phi_hess=lambda x: 2 * np.eye(len(a)),
            name="squared distance to point",
        )


class SphereTarget(msgspec.Struct, frozen=True, tag="sphere", tag_field="kind"):
    """Γ = {x : |x - a| = r}."""

    a: tuple[float, ...]
    r: float

    def __post_init__(self) -> None:
        """The radius must be positive."""
        if not self.r > 0:
            raise ValueError(f"sphere radius must be positive, got {self.r}")

    def signed_gap(self, x: typing.Any) -> float:
        """s = |x - a| - r, positive outside the sphere."""
        return float(np.linalg.norm(as_vector(x) - np.asarray(self.a))) - self.r

    def normal(self, x: typing.Any) -> Vector:
        """n(x) = (x - a)/|x - a|."""
        rel = as_vector(x) - np.asarray(self.a)
        norm = float(np.linalg.norm(rel))
        if norm == 0.0:
            raise DomainError("the sphere normal is undefined at the center")
        return rel / norm

    def path_values(self, xs: Points) -> Vector:
        """(|x - a| - r)² per row."""
        radii = np.linalg.norm(np.atleast_2d(xs) - np.asarray(self.a), axis=1)
        return (radii - self.r) ** 2

    def as_functional(self) -> "FunctionalTarget":
        """φ(x) = (|x - a| - r)² with its derivatives."""

        def hess(x: Vector) -> Matrix:
            rel = as_vector(x) - np.asarray(self.a)
            dist = float(np.linalg.norm(rel))
            normal = rel / dist
            tangential = np.eye(len(rel)) - np.outer(normal, normal)
            return 2 * np.outer(normal, normal) + 2 * (dist - self.r) / dist * tangential

        return FunctionalTarget(
            phi=lambda x: float(self.path_values(as_vector(x)[None, :])[0]),
            phi_grad=lambda x: 2 * self.signed_gap(x) * self.normal(x),
            phi_hess=hess,
            name="squared distance to sphere",
        )


class FunctionalTarget(msgspec.Struct, frozen=True, kw_only=True):
    """A caller-supplied smooth functional φ with gradient and Hessian."""

    phi: typing.Callable[[Vector], float]
    phi_grad: typing.Callable[[Vector], Vector]
    phi_hess: typing.Callable[[Vector], Matrix]
    name: str = "functional"

    def path_values(self, xs: Points) -> Vector:
        """φ per row."""
        values = np.array([self.phi(x) for x in np.atleast_2d(xs)], dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.name} is not finite along the path")
        return values


Target = PointTarget | SphereTarget | FunctionalTarget


class LimitLawConfig(msgspec.Struct, frozen=True, kw_only=True):
    """Monte Carlo settings for sampled limit laws."""

    draws: int = DEFAULT_DRAWS
    seed: int = 0
    beta: float = 0.0
    workers: int = 1

    def __post_init__(self) -> None:
        """Enough draws to resolve the quantiles we need."""
        if self.draws < MIN_DRAWS:
            raise ValueError(f"at least {MIN_DRAWS} draws are needed, got {self.draws}")


class TestReport(msgspec.Struct, kw_only=True):
    """Outcome of a reach/functional test."""

    __test__ = False  # not a pytest class

    statistic: float
    critical_value: float
    p_value: float
    reject: bool
    tau_hat: float
    k_hat: int
    d2_min: float
    law: Law
    alpha: float
    seed: int
    mc_draws: int = msgspec.field(name="draws", default=0)
    flags: list[str] = msgspec.field(default_factory=list)


class DistanceInterval(msgspec.Struct, kw_only=True):
    """Standardised distance statistic and confidence interval for D² (normal regime)."""

    d2_hat: float
    k_hat: int
    sigma_hat: float
    bias: float
    z: float | None = None
    ci: tuple[float, float] | None = None
    degenerate: bool = False


class PValuePoint(msgspec.Struct, frozen=True):
    """p-value of 'the true curve passes through `point`'."""

    point: Vector
    p_value: float
    k_hat: int


class BranchingResult(msgspec.Struct, frozen=True, kw_only=True):
    """ν = √(nh^d)(|V̂|² - 1)/σ̂ at one point."""

    nu: float
    sigma2_hat: float
    v_norm2: float
    caveat: str = (
        "asymptotically N(0, 1) under the additive-noise model only; with unit-norm observations the limit law differs"
    )


class KSResult(msgspec.Struct, frozen=True):
    """Kolmogorov-Smirnov statistic and p-value."""

    stat: float
    p: float


def min_sq_distance(traj: Trajectory, target: Target) -> tuple[float, int]:
    """Minimum over all states of the target's path value (ties go to the smallest k)."""
    values = target.path_values(traj.xs)
    k = int(tied_minima(values)[0])
    return float(values[k]), k


def _sqrt_psd(c: Matrix) -> Matrix:
    """Symmetric square root, clamping negative eigenvalues that lie within tolerance."""
    c = np.asarray(c, dtype=np.float64)
    if not np.allclose(c, c.T, rtol=0, atol=1e-12 * max(1.0, float(np.max(np.abs(c))))):
        raise NotPSDError("covariance matrix is not symmetric")
    eigenvalues, eigenvectors = np.linalg.eigh(c)
    trace = float(np.trace(c))
    if eigenvalues[0] < -PSD_RELATIVE_TOL * max(trace, 0.0) and eigenvalues[0] < -1e-300:
        raise NotPSDError(f"covariance matrix has eigenvalue {eigenvalues[0]:.3e}")
    return (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T


def _draw_chunk(
    seed: int, chunk: int, size: int, mean: Vector, root: Matrix, form: typing.Callable[[Points], Vector]
) -> Vector:
    z = substream(seed, chunk).standard_normal((size, len(mean))) @ root + mean
    return form(z)


def sample_gaussian_law(
    m: typing.Any, c: typing.Any, form: typing.Callable[[Points], Vector], cfg: LimitLawConfig
) -> Vector:
    """
    Sorted draws of form(Z) with Z ~ N(√β m, c).

    Draws come in chunks of fixed size; chunk i uses substream (seed, i), so the sorted result does not depend on how
    many worker threads are used.
    """
    root = _sqrt_psd(c)
    mean = math.sqrt(cfg.beta) * as_vector(m)
    sizes = [CHUNK_DRAWS] * (cfg.draws // CHUNK_DRAWS)
    if rest := cfg.draws % CHUNK_DRAWS:
        sizes.append(rest)

    if cfg.workers > 1:
        worker = threadful.thread(_draw_chunk)
        parts = []
        for start in range(0, len(sizes), cfg.workers):
            batch = [worker(cfg.seed, i, sizes[i], mean, root, form) for i in range(start, start + cfg.workers)
                     if i < len(sizes)]
            parts.extend(job.join() for job in batch)
    else:
        parts = [_draw_chunk(cfg.seed, i, size, mean, root, form) for i, size in enumerate(sizes)]

    return np.sort(np.concatenate(parts))


def _projected_quadratic(hessian: Matrix, v: Vector) -> typing.Callable[[Points], Vector]:
    """Z ↦ ½[H(Z,Z) - H(v,Z)²/H(v,v)], or ½H(Z,Z) when H(v,·) vanishes."""
    h = np.asarray(hessian, dtype=np.float64)
    h = (h + h.T) / 2
    hv = h @ v
    hvv = float(v @ hv)
    curvature_scale = float(np.linalg.norm(h, 2)) * float(v @ v)

    if abs(hvv) <= VANISHING_CURVATURE_TOL * curvature_scale:

        def form(z: Points) -> Vector:
            return 0.5 * np.einsum("ij,ij->i", z @ h, z)

        return form

    if hvv < 0:
        raise DomainError("the functional must curve upwards along the flow direction at the minimum")

    def projected(z: Points) -> Vector:
        along = z @ hv
        return 0.5 * (np.einsum("ij,ij->i", z @ h, z) - along * along / hvv)

    return projected


def sample_projected_quadratic_law(
    m: typing.Any, c: typing.Any, hessian: typing.Any, v: typing.Any, cfg: LimitLawConfig
) -> Vector:
    """Sorted draws of the quadratic-regime limit law ½[H(Z,Z) - H(v,Z)²/H(v,v)], Z ~ N(√β m, c)."""
    v = as_vector(v)
    if float(np.linalg.norm(v)) == 0.0:
        raise DomainError("the flow direction v must be nonzero")
    return sample_gaussian_law(m, c, _projected_quadratic(np.asarray(hessian), v), cfg)


def sample_chi2type_law(m: typing.Any, c: typing.Any, v: typing.Any, cfg: LimitLawConfig) -> Vector:
    """Sorted draws of |Z|² - (v*Z)²/|v|², Z ~ N(√β m, c): the null law of 'the curve passes through a'."""
    d = len(as_vector(v))
    return sample_projected_quadratic_law(m, c, 2 * np.eye(d), v, cfg)


def sample_tangent_sphere_law(m: typing.Any, c: typing.Any, normal: typing.Any, cfg: LimitLawConfig) -> Vector:
    """Sorted draws of γ² with γ = n*Z, Z ~ N(√β m, c): the null law of 'the curve touches the sphere'."""
    unit = as_vector(normal)

    def form(z: Points) -> Vector:
        gamma = z @ unit
        return gamma * gamma

    return sample_gaussian_law(m, c, form, cfg)


def _scale(n: int, h: float, d: int) -> float:
    return n * h ** (d - 1)


def _report_from_samples(
    statistic: float,
    samples: Vector,
    alpha: float,
    k_hat: int,
    traj: Trajectory,
    d2_min: float,
    law: Law,
    cfg: LimitLawConfig,
    flags: list[str] | None = None,
) -> TestReport:
    critical = float(np.quantile(samples, 1 - alpha, method="inverted_cdf"))
    exceed = len(samples) - int(np.searchsorted(samples, statistic, side="left"))
    return TestReport(
        statistic=statistic,
        critical_value=critical,
        p_value=exceed / len(samples),
        reject=statistic >= critical,
        tau_hat=traj.states[k_hat].t,
        k_hat=k_hat,
        d2_min=d2_min,
        law=law,
        alpha=alpha,
        seed=cfg.seed,
        mc_draws=cfg.draws,
        flags=flags or [],
    )


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


def test_point_reach(
    traj: Trajectory, a: typing.Any, alpha: float, n: int, h: float, d: int, cfg: LimitLawConfig
) -> TestReport:
    """
    Test 'the true curve passes through a'.

    Λ̂ = nh^{d-1} min_k |X̂_k - a|² is compared with the (1-α) quantile of the χ²-type law at k̂.
    """
    _check_alpha(alpha)
    d2, k = min_sq_distance(traj, PointTarget(a=tuple(as_vector(a))))
    state = traj.states[k]
    samples = sample_chi2type_law(state.m_hat, state.c_hat, state.v_hat, cfg)
    return _report_from_samples(_scale(n, h, d) * d2, samples, alpha, k, traj, d2, "chi2type", cfg)


test_point_reach.__test__ = False  # type: ignore[attr-defined]


def test_sphere_reach(
    traj: Trajectory, target: SphereTarget, alpha: float, n: int, h: float, d: int, cfg: LimitLawConfig
) -> TestReport:
    """Test 'the true curve touches the sphere' against the γ² law of the tangent case."""
    _check_alpha(alpha)
    d2, k = min_sq_distance(traj, target)
    state = traj.states[k]
    samples = sample_tangent_sphere_law(state.m_hat, state.c_hat, target.normal(state.x_hat), cfg)
    return _report_from_samples(_scale(n, h, d) * d2, samples, alpha, k, traj, d2, "tangent_sphere", cfg)


test_sphere_reach.__test__ = False  # type: ignore[attr-defined]


def ci_distance_normal(
    traj: Trajectory,
    target: PointTarget | SphereTarget,
    D2_null: float,
    alpha: float,
    n: int,
    h: float,
    d: int,
    beta: float = 0.0,
) -> DistanceInterval:
    """
    Standardised minimal squared distance and a (1-α) interval for D², in the regime D² > 0.

    σ̂² = 4 s² n̂*Ĉn̂ with s the (signed) gap and n̂ the unit normal at X̂_k̂ (for a point, s n̂ = X̂ - a); the bias
    2√β s M̂*n̂ / √(nh^{d-1}) is subtracted.
    """
    _check_alpha(alpha)
    d2, k = min_sq_distance(traj, target)
    state = traj.states[k]
    root_scale = math.sqrt(_scale(n, h, d))

    match target:
        case PointTarget(a=a):
            gap = state.x_hat - np.asarray(a)
        case SphereTarget():
            gap = target.signed_gap(state.x_hat) * target.normal(state.x_hat)

    sigma = math.sqrt(max(4 * float(gap @ state.c_hat @ gap), 0.0))
    bias = 2 * math.sqrt(beta) * float(state.m_hat @ gap) / root_scale
    if sigma == 0.0 or d2 <= 0.0:
        return DistanceInterval(d2_hat=d2, k_hat=k, sigma_hat=sigma, bias=bias, degenerate=True)

    half_width = float(stats.norm.ppf(1 - alpha / 2)) * sigma / root_scale
    return DistanceInterval(
        d2_hat=d2,
        k_hat=k,
        sigma_hat=sigma,
        bias=bias,
        z=root_scale * (d2 - D2_null - bias) / sigma,
        ci=(d2 - bias - half_width, d2 - bias + half_width),
    )


def _grad_floor(hessian: Matrix, c: Matrix, scale: float) -> float:
    curvature = float(np.linalg.norm(hessian, 2))
    noise = math.sqrt(max(float(np.trace(c)), 0.0) / scale)
    return max(GRAD_FLOOR_RELATIVE * curvature, GRAD_FLOOR_NOISE_FACTOR * curvature * noise)


def test_functional_min(
    traj: Trajectory,
    f: FunctionalTarget,
    inf_null: float,
    alpha: float,
    n: int,
    h: float,
    d: int,
    cfg: LimitLawConfig,
    grad_floor: float | None = None,
) -> TestReport:
    """
    Test 'inf_t φ(x(t)) = inf_null' for a smooth functional with a unique minimiser on the path.

    When |φ′(X̂_k̂)| exceeds the gradient floor the normal law N(√β M̂*φ′, φ′*Ĉφ′) for √s(min φ - inf_null) is used;
    otherwise s(min φ - inf_null) is compared with the quadratic-regime law built from φ″ and V̂(X̂_k̂).
    """
    _check_alpha(alpha)
    values = f.path_values(traj.xs)
    tied = tied_minima(values)
    k = int(tied[0])
    phi_min = float(values[k])
    if len(tied) > 1:
        raise MultipleMinimaError(f"{f.name} attains its path minimum at more than one state")

    state = traj.states[k]
    scale = _scale(n, h, d)
    grad = as_vector(f.phi_grad(state.x_hat))
    hessian = np.asarray(f.phi_hess(state.x_hat), dtype=np.float64)
    floor = grad_floor if grad_floor is not None else _grad_floor(hessian, state.c_hat, scale)
    grad_norm = float(np.linalg.norm(grad))

    if grad_norm <= floor:
        samples = sample_projected_quadratic_law(state.m_hat, state.c_hat, hessian, state.v_hat, cfg)
        return _report_from_samples(scale * (phi_min - inf_null), samples, alpha, k, traj, phi_min, "chi2type", cfg)

    flags = ["regime-uncertain"] if grad_norm <= UNCERTAIN_BAND_FACTOR * floor else []
    statistic = math.sqrt(scale) * (phi_min - inf_null)
    mean = math.sqrt(cfg.beta) * float(state.m_hat @ grad)
    sd = math.sqrt(max(float(grad @ state.c_hat @ grad), 0.0))
    if sd == 0.0:
        flags.append("degenerate-variance")
        critical, p_value = mean, (0.0 if statistic > mean else 1.0)
    else:
        critical = mean + sd * float(stats.norm.ppf(1 - alpha))
        p_value = float(stats.norm.sf((statistic - mean) / sd))

    return TestReport(
        statistic=statistic,
        critical_value=critical,
        p_value=p_value,
        reject=statistic >= critical,
        tau_hat=state.t,
        k_hat=k,
        d2_min=phi_min,
        law="normal",
        alpha=alpha,
        seed=cfg.seed,
        mc_draws=0,
        flags=flags,
    )


test_functional_min.__test__ = False  # type: ignore[attr-defined]


def power_theoretical(
    D: float,
    Lambda_alpha: float,
    n: int,
    h: float,
    d: int,
    beta: float,
    m_hat: typing.Any,
    c_hat: typing.Any,
    normal_hat: typing.Any,
) -> float:
    """
    Asymptotic power of the point-reach test at true distance D > 0:

        1 - Φ( (s^{-1/2}Λ_α - s^{1/2}D² - 2√β D M̂*n̂) / (2D (n̂*Ĉn̂)^{1/2}) ),  s = nh^{d-1}.
    """
    if not D > 0:
        raise DomainError(f"the power formula needs D > 0, got {D} (use alpha at the null)")
    scale = _scale(n, h, d)
    if not scale > 0:
        raise DomainError("nh^{d-1} must be positive")
    unit = as_vector(normal_hat)
    numerator = Lambda_alpha / math.sqrt(scale) - math.sqrt(scale) * D**2
    numerator -= 2 * math.sqrt(beta) * D * float(as_vector(m_hat) @ unit)
    spread = float(unit @ np.asarray(c_hat) @ unit)
    if spread <= 0:
        return 1.0 if numerator < 0 else (0.5 if numerator == 0 else 0.0)
    return float(stats.norm.sf(numerator / (2 * D * math.sqrt(spread))))


def pvalue_map(
    traj: Trajectory, grid: typing.Any, alpha: float, n: int, h: float, d: int, cfg: LimitLawConfig
) -> list[PValuePoint]:
    """p-value of the point-reach test at every grid point; law samples are shared between points with the same k̂."""
    _check_alpha(alpha)
    points = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("the p-value grid is empty")
    xs = traj.xs
    scale = _scale(n, h, d)
    laws: dict[int, Vector] = {}
    out = []
    for point in points:
        gaps = xs - point
        dist2 = np.sum(gaps * gaps, axis=1)
        k = int(tied_minima(dist2)[0])
        if k not in laws:
            state = traj.states[k]
            laws[k] = sample_chi2type_law(state.m_hat, state.c_hat, state.v_hat, cfg)
        samples = laws[k]
        statistic = scale * float(dist2[k])
        exceed = len(samples) - int(np.searchsorted(samples, statistic, side="left"))
        out.append(PValuePoint(point=point, p_value=exceed / len(samples), k_hat=k))
    return out


def branching_statistic(
    obs: ObservationSet, cfg_est: EstimatorConfig, x: typing.Any, sigma_hat: Matrix | None = None
) -> BranchingResult:
    """
    Crossing detector ν = √(nh^d)(|V̂(x)|² - 1)/σ̂ with σ̂² = 4|G|∫K²(1 + V̂*Σ̂V̂).

    Strongly negative ν signals a crossing (V̂ averages unit vectors of several directions).
    """
    sigma_hat = noise_cov_estimate(obs, cfg_est) if sigma_hat is None else sigma_hat
    value = nw_estimate(obs, cfg_est, x)
    norm2 = float(value @ value)
    d = obs.dim
    sigma2 = 4 * obs.volume * KERNELS[cfg_est.kernel].square_integral(d) * (1 + float(value @ sigma_hat @ value))
    nu = math.sqrt(obs.n * cfg_est.h**d) * (norm2 - 1) / math.sqrt(sigma2)
    return BranchingResult(nu=nu, sigma2_hat=sigma2, v_norm2=norm2)


def branching_scan(traj: Trajectory, obs: ObservationSet, cfg_est: EstimatorConfig) -> list[BranchingResult]:
    """ν at every state of a trajectory."""
    sigma_hat = noise_cov_estimate(obs, cfg_est)
    return [branching_statistic(obs, cfg_est, state.x_hat, sigma_hat=sigma_hat) for state in traj.states]


def ks_test(samples: typing.Any, reference_cdf: typing.Callable[[Vector], Vector] = stats.norm.cdf) -> KSResult:
    """One-sample KS statistic with the asymptotic (Kolmogorov series) p-value."""
    data = np.sort(np.asarray(samples, dtype=np.float64))
    if len(data) < 10:
        raise ValueError(f"the KS test needs at least 10 samples, got {len(data)}")
    result = stats.ks_1samp(data, reference_cdf, method="asymp")
    return KSResult(stat=float(result.statistic), p=float(result.pvalue))


def ks_two_sample(first: typing.Any, second: typing.Any) -> KSResult:
    """Two-sample KS comparison, used to match Monte Carlo statistics against sampled limit laws."""
    result = stats.ks_2samp(np.asarray(first, dtype=np.float64), np.asarray(second, dtype=np.float64))
    return KSResult(stat=float(result.statistic), p=float(result.pvalue))
