"""
Simultaneous Euler tracking of an integral curve, its bias vector and its covariance matrix.

The three recurrences

    X̂_{k+1} = X̂_k + δ V̂(X̂_k)
    Ĉ_{k+1} = Ĉ_k + δ [|G| ψ(V̂(X̂_k)) (Σ̂ + V̂V̂*) + V̂′Ĉ_k + Ĉ_k V̂′*]
    M̂_{k+1} = M̂_k + δ [V̂′ M̂_k + Ŵ/2]

are driven either by the kernel estimates (`track_curve`) or by an analytic field (`track_reference`, the oracle).
"""

import math
import typing

import msgspec
import numpy as np
from result import Err, Ok, Result
from scipy import integrate, stats

from ._constants import DOMAIN_MARGIN_BANDWIDTHS, PSD_RELATIVE_TOL, SPEED_FLOOR, TIE_TOL
from ._typing import Empty, Matrix, Maybe, Points, Tensor3, Vector, as_vector
from .field import KERNELS, Box, DomainError, EstimatorConfig, FieldEstimate, ObservationSet, estimate_field
from .field import noise_cov_estimate

StopReason = typing.Literal["horizon", "speed_floor", "domain_exit"]


class TrackConfig(msgspec.Struct, frozen=True, kw_only=True):
    """Start point, horizon T, step δ, stopping floor ε_v and the estimator bandwidths."""

    x0: tuple[float, ...]
    T: float
    delta: float
    bandwidth: EstimatorConfig
    sample_size_n: int | None = None
    speed_floor: float = SPEED_FLOOR

    def __post_init__(self) -> None:
        """Validate horizon, step and floor."""
        if not (self.delta > 0 and self.T > 0):
            raise ValueError(f"T and delta must be positive, got T={self.T}, delta={self.delta}")
        if not self.delta < self.T:
            raise ValueError(f"step delta={self.delta} must be smaller than the horizon T={self.T}")
        if not self.speed_floor > 0:
            raise ValueError("speed_floor must be positive (ψ diverges where the estimated field vanishes)")

    @property
    def steps(self) -> int:
        """N = ⌈T/δ⌉."""
        return math.ceil(self.T / self.delta - 1e-9)


class TrackState(msgspec.Struct, frozen=True):
    """One step of the tracker: (X̂_k, M̂_k, Ĉ_k) plus the field value V̂(X̂_k) that drove the step."""

    k: int
    t: float
    x_hat: Vector
    m_hat: Vector
    c_hat: Matrix
    v_hat: Vector


class Trajectory(msgspec.Struct, kw_only=True):
    """The discretised curve, bias and covariance, with the reason tracking stopped."""

    states: list[TrackState]
    config: TrackConfig
    n: int
    volume: float
    stopped_early: bool = False
    stop_reason: StopReason = "horizon"
    warnings: list[str] = msgspec.field(default_factory=list)

    def __post_init__(self) -> None:
        """A trajectory always contains its start state."""
        if not self.states:
            raise ValueError("a trajectory needs at least one state")

    def __len__(self) -> int:
        """Number of states."""
        return len(self.states)

    @property
    def dim(self) -> int:
        """Dimension d."""
        return len(self.config.x0)

    @property
    def times(self) -> Vector:
        """t_k = kδ."""
        return np.array([s.t for s in self.states])

    @property
    def xs(self) -> Points:
        """X̂_k stacked, shape (N+1, d)."""
        return np.array([s.x_hat for s in self.states])

    @property
    def ms(self) -> Points:
        """M̂_k stacked."""
        return np.array([s.m_hat for s in self.states])

    @property
    def cs(self) -> np.ndarray:
        """Ĉ_k stacked, shape (N+1, d, d)."""
        return np.array([s.c_hat for s in self.states])

    @property
    def vs(self) -> Points:
        """V̂(X̂_k) stacked."""
        return np.array([s.v_hat for s in self.states])


class AnalyticField(msgspec.Struct, frozen=True, kw_only=True):
    """
    A known vector field with its derivatives and the true noise covariance.

    `v` accepts (..., d) arrays; `v_prime` returns [l, j] = ∂v_l/∂x_j and `v_second` returns [j, k, l] =
    ∂²v_l/∂x_j∂x_k at a single point.
    """

    name: str
    v: typing.Callable[[np.ndarray], np.ndarray]
    v_prime: typing.Callable[[Vector], Matrix]
    v_second: typing.Callable[[Vector], Tensor3]
    sigma: Matrix

    @property
    def dim(self) -> int:
        """Dimension d."""
        return int(self.sigma.shape[0])


class EllipseAxis(msgspec.Struct, frozen=True):
    """A principal axis: unit direction and semi-length."""

    direction: Vector
    semi_length: float


class Ellipsoid(msgspec.Struct, frozen=True):
    """A (1-α) confidence region for the curve point at one state."""

    center: Vector
    axes: list[EllipseAxis]
    alpha: float

    def contains(self, point: typing.Any) -> bool:
        """Is `point` inside (or on) the ellipsoid?"""
        offset = as_vector(point) - self.center
        total = 0.0
        for axis in self.axes:
            along = float(offset @ axis.direction)
            if axis.semi_length == 0.0:
                if abs(along) > 1e-12:
                    return False
                continue
            total += (along / axis.semi_length) ** 2
        return total <= 1.0


class BandwidthChoice(msgspec.Struct, frozen=True, kw_only=True):
    """MISE-optimal calibration β̄ (global) and β̄₁ (distance to a target), with the bandwidths they imply."""

    beta: float
    h: float
    A: float
    B: float
    beta_local: float | None = None
    h_local: float | None = None


def _psd_violation(c: Matrix) -> float | None:
    """The offending eigenvalue when c is not PSD within tolerance, else None."""
    trace = float(np.trace(c))
    if trace <= 0.0:
        return None
    smallest = float(np.linalg.eigvalsh(c)[0])
    return smallest if smallest < -PSD_RELATIVE_TOL * trace else None


def _integrate(
    evaluate: typing.Callable[[Vector], FieldEstimate],
    sigma: Matrix,
    cfg: TrackConfig,
    n: int,
    volume: float,
    stop_box: Box | None,
) -> Trajectory:
    psi = KERNELS[cfg.bandwidth.kernel].psi
    d = len(cfg.x0)
    x = as_vector(cfg.x0)
    m = np.zeros(d)
    c = np.zeros((d, d))
    delta = cfg.delta

    states: list[TrackState] = []
    warnings: list[str] = []
    reason: StopReason = "horizon"

    for k in range(cfg.steps + 1):
        est = evaluate(x)
        v = est.value
        states.append(TrackState(k=k, t=k * delta, x_hat=x, m_hat=m, c_hat=c, v_hat=v))
        if k == cfg.steps:
            break
        if float(np.linalg.norm(v)) < cfg.speed_floor:
            reason = "speed_floor"
            break
        if stop_box is not None and not stop_box.contains(x):
            reason = "domain_exit"
            break

        a = est.jacobian
        forcing = volume * psi(v) * (sigma + np.outer(v, v))
        c_next = c + delta * (forcing + a @ c + c @ a.T)
        c = (c_next + c_next.T) / 2
        w = est.w_term if est.w_term is not None else np.zeros(d)
        m = m + delta * (a @ m + 0.5 * w)
        x = x + delta * v

        if (bad := _psd_violation(c)) is not None:
            warnings.append(f"step {k + 1}: covariance has eigenvalue {bad:.3e} below the PSD tolerance")

    return Trajectory(
        states=states,
        config=cfg,
        n=n,
        volume=volume,
        stopped_early=reason != "horizon",
        stop_reason=reason,
        warnings=warnings,
    )


def track_curve(obs: ObservationSet, cfg: TrackConfig) -> Trajectory:
    """
    Track X̂, M̂ and Ĉ from the observations.

    Σ̂ is estimated once up front. Tracking stops at the horizon, when |V̂| drops below the speed floor, or when the
    curve leaves the domain inflated by 2h per side; the reason is recorded on the trajectory.
    """
    if len(cfg.x0) != obs.dim:
        raise ValueError(f"start point is {len(cfg.x0)}-dimensional, observations are {obs.dim}-dimensional")
    if not obs.domain.contains(cfg.x0):
        raise ValueError(f"start point {cfg.x0} lies outside the domain")

    est_cfg = cfg.bandwidth
    sigma_hat = noise_cov_estimate(obs, est_cfg)
    stop_box = obs.domain.inflate(DOMAIN_MARGIN_BANDWIDTHS * est_cfg.h)

    return _integrate(
        lambda x: estimate_field(obs, est_cfg, x, with_w=True),
        sigma_hat,
        cfg,
        n=cfg.sample_size_n or obs.n,
        volume=obs.volume,
        stop_box=stop_box,
    )


def track_reference(
    field: AnalyticField, cfg: TrackConfig, volume: float = 1.0, domain: Box | None = None
) -> Trajectory:
    """
    The same Euler scheme driven by the true v, v′, v″ and Σ: a discretisation of x(t), M(t) and C(t).

    `volume` is |G| of the sampling design the limit process refers to.
    """

    def evaluate(x: Vector) -> FieldEstimate:
        second = field.v_second(x)
        return FieldEstimate(
            value=np.asarray(field.v(x), dtype=np.float64),
            jacobian=field.v_prime(x),
            w_term=np.einsum("jjl->l", second),
        )

    return _integrate(evaluate, field.sigma, cfg, n=cfg.sample_size_n or 0, volume=volume, stop_box=domain)


def confidence_ellipse(
    state: TrackState, alpha: float, n: int, h: float, beta: float = 0.0, bias_corrected: bool = True
) -> Ellipsoid:
    """
    (1-α) region of N(X̂_k - √β M̂_k / √(nh^{d-1}), Ĉ_k / (nh^{d-1})).

    Semi-lengths are √(q λ_i / (nh^{d-1})) along the eigenvectors of Ĉ_k, q the χ²_d quantile at 1-α.
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    d = len(state.x_hat)
    scale = n * h ** (d - 1)
    center = np.array(state.x_hat, dtype=np.float64)
    if bias_corrected and beta > 0:
        center = center - math.sqrt(beta) * state.m_hat / math.sqrt(scale)

    quantile = float(stats.chi2.ppf(1 - alpha, d))
    eigenvalues, eigenvectors = np.linalg.eigh(state.c_hat)
    axes = [
        EllipseAxis(direction=eigenvectors[:, i], semi_length=math.sqrt(quantile * max(lam, 0.0) / scale))
        for i, lam in enumerate(eigenvalues)
    ]
    return Ellipsoid(center=center, axes=axes, alpha=alpha)


def tied_minima(values: Vector) -> np.ndarray:
    """Indices whose value lies within TIE_TOL (relative) of the minimum, in increasing order."""
    lowest = float(np.min(values))
    return np.flatnonzero(values <= lowest + TIE_TOL * max(1.0, abs(lowest)))


def mise_objective(beta: float, A: float, B: float, d: int) -> float:
    """A β^{-(d-1)/(d+3)} + B β^{4/(d+3)}, the β-dependent part of the MISE."""
    return A * beta ** (-(d - 1) / (d + 3)) + B * beta ** (4 / (d + 3))


def _local_choice(ref: Trajectory, target: Vector, d: int) -> Maybe[float]:
    gaps = ref.xs - target
    k = int(tied_minima(np.sum(gaps * gaps, axis=1))[0])
    gap = gaps[k]
    a_local = 4 * float(gap @ ref.states[k].c_hat @ gap)
    b_local = 4 * float(ref.states[k].m_hat @ gap) ** 2
    if b_local <= 0:
        return Empty()
    return Ok((d - 1) * a_local / (4 * b_local))


def select_bandwidth_mise(
    ref: Trajectory, n: int, d: int | None = None, target: typing.Any = None
) -> Result[BandwidthChoice, ValueError]:
    """
    Minimise the asymptotic MISE over β.

    With A = ∫Tr C dt and B = ∫|M|² dt the minimiser is β̄ = (d-1)A / (4B). When a target point is given, the local
    criterion with A₁ = 4(x(τ)-a)*C(τ)(x(τ)-a), B₁ = 4(M(τ)*(x(τ)-a))² is minimised as well.
    """
    d = d or ref.dim
    times = ref.times
    cs, ms = ref.cs, ref.ms
    A = float(integrate.trapezoid(np.trace(cs, axis1=1, axis2=2), times)) if len(ref) > 1 else 0.0
    B = float(integrate.trapezoid(np.sum(ms * ms, axis=1), times)) if len(ref) > 1 else 0.0
    if B <= 0:
        return Err(ValueError("the bias integral is zero: the MISE has no finite minimiser in beta"))

    beta = (d - 1) * A / (4 * B)
    h = (beta / n) ** (1 / (d + 3))

    beta_local: float | None = None
    h_local: float | None = None
    if target is not None:
        match _local_choice(ref, as_vector(target), d):
            case Ok(value) if value > 0:
                beta_local = value
                h_local = (value / n) ** (1 / (d + 3))
            case _:
                pass

    return Ok(BandwidthChoice(beta=beta, h=h, A=A, B=B, beta_local=beta_local, h_local=h_local))
