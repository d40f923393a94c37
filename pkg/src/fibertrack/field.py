"""
Kernel machinery and Nadaraya-Watson estimates of a vector field and its derivatives.

The design is uniform on a box G, so no density estimate is needed in the denominator; the known density 1/|G| is
accounted for by the factor |G| in front of every kernel sum (on a unit-volume box this is the textbook estimator).
"""

import math
import typing

import msgspec
import msgspec.structs
import numpy as np

from ._typing import Matrix, Points, Tensor3, Vector, as_vector

ROW_CHUNK = 512  # rows of the (rows, n, d) offset block built at once in vectorised evaluation


class DomainError(ValueError):
    """A quantity is mathematically undefined for the given input."""


class Box(msgspec.Struct, frozen=True):
    """Axis-aligned box G, given by its lower and upper corner."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        """Validate the corners."""
        if len(self.lower) != len(self.upper):
            raise ValueError(f"box corners differ in dimension: {len(self.lower)} vs {len(self.upper)}")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"box lower corner {self.lower} must be below upper corner {self.upper} on every axis")

    @classmethod
    def cube(cls, half_width: float, dim: int = 2) -> "Box":
        """Centered cube [-w, w]^d."""
        return cls(lower=(-half_width,) * dim, upper=(half_width,) * dim)

    @property
    def dim(self) -> int:
        """Dimension d."""
        return len(self.lower)

    @property
    def volume(self) -> float:
        """Lebesgue measure |G|."""
        return math.prod(hi - lo for lo, hi in zip(self.lower, self.upper))

    def contains(self, x: typing.Any) -> bool:
        """Is x inside the (closed) box?"""
        point = as_vector(x)
        return bool(np.all(point >= np.asarray(self.lower)) and np.all(point <= np.asarray(self.upper)))

    def inflate(self, margin: float) -> "Box":
        """Box grown by `margin` on every side."""
        return Box(
            lower=tuple(lo - margin for lo in self.lower),
            upper=tuple(hi + margin for hi in self.upper),
        )


class ObservationSet(msgspec.Struct, frozen=True):
    """The sample {(X_i, V_i)}: n positions in G and the noisy field vectors observed there."""

    points: Points
    values: Points
    domain: Box

    def __post_init__(self) -> None:
        """Check shapes, dimension and that every position lies in the domain."""
        # stored C-contiguous float64 whatever the caller's layout
        for name in ("points", "values"):
            msgspec.structs.force_setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        if self.points.ndim != 2 or self.values.ndim != 2:
            raise ValueError("points and values must be (n, d) arrays")
        if self.points.shape != self.values.shape:
            raise ValueError(f"points {self.points.shape} and values {self.values.shape} must have the same shape")
        n, d = self.points.shape
        if n < 1:
            raise ValueError("an observation set needs at least one observation")
        if d < 2:
            raise ValueError(f"dimension must be at least 2, got {d}")
        if d != self.domain.dim:
            raise ValueError(f"observations are {d}-dimensional but the domain is {self.domain.dim}-dimensional")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.values))):
            raise ValueError("observations must be finite")
        lower, upper = np.asarray(self.domain.lower), np.asarray(self.domain.upper)
        outside = np.any((self.points < lower) | (self.points > upper), axis=1)
        if outside.any():
            first = int(np.argmax(outside))
            raise ValueError(f"observation {first} at {self.points[first].tolist()} lies outside the domain")

    @classmethod
    def from_arrays(cls, points: typing.Any, values: typing.Any, domain: Box) -> "ObservationSet":
        """Build from anything array-like."""
        return cls(
            points=np.atleast_2d(np.asarray(points, dtype=np.float64)),
            values=np.atleast_2d(np.asarray(values, dtype=np.float64)),
            domain=domain,
        )

    @property
    def n(self) -> int:
        """Sample size."""
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        """Dimension d."""
        return int(self.points.shape[1])

    @property
    def volume(self) -> float:
        """|G|, the inverse of the design density."""
        return self.domain.volume

    def with_values(self, values: typing.Any) -> "ObservationSet":
        """Same design, other observed vectors."""
        return ObservationSet(points=self.points, values=np.asarray(values, dtype=np.float64), domain=self.domain)

    def shifted(self, offset: typing.Any) -> "ObservationSet":
        """Translate positions and domain by the same offset."""
        shift = as_vector(offset)
        return ObservationSet(
            points=self.points + shift,
            values=self.values,
            domain=Box(
                lower=tuple(float(v) for v in np.asarray(self.domain.lower) + shift),
                upper=tuple(float(v) for v in np.asarray(self.domain.upper) + shift),
            ),
        )


class GaussianKernel:
    """
    The standard Gaussian kernel K(u) = (2π)^{-d/2} exp(-|u|²/2).

    All methods take offsets of shape (..., d) and broadcast over the leading axes.
    """

    name = "gaussian"

    @staticmethod
    def eval(u: np.ndarray) -> np.ndarray:
        """K(u)."""
        d = u.shape[-1]
        return np.exp(-0.5 * np.sum(u * u, axis=-1)) / (2 * math.pi) ** (d / 2)

    def grad(self, u: np.ndarray) -> np.ndarray:
        """∇K(u) = -u K(u)."""
        return -u * self.eval(u)[..., None]

    def hessian(self, u: np.ndarray) -> np.ndarray:
        """∇²K(u) = (u u* - I) K(u), shape (..., d, d)."""
        d = u.shape[-1]
        outer = u[..., :, None] * u[..., None, :]
        return (outer - np.eye(d)) * self.eval(u)[..., None, None]

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        """Trace of the Hessian, (|u|² - d) K(u)."""
        d = u.shape[-1]
        return (np.sum(u * u, axis=-1) - d) * self.eval(u)

    @staticmethod
    def psi(v: Vector) -> float:
        """ψ(v) = ∫Ψ(vτ)dτ with Ψ(y) = ∫K(z)K(z+y)dz = (4π)^{-d/2} exp(-|y|²/4)."""
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise DomainError("ψ(v) diverges at v = 0")
        d = len(v)
        return 2 * math.sqrt(math.pi) * (4 * math.pi) ** (-d / 2) / norm

    @staticmethod
    def square_integral(d: int) -> float:
        """∫K²(u)du = (4π)^{-d/2}."""
        return (4 * math.pi) ** (-d / 2)


KERNELS: dict[str, GaussianKernel] = {"gaussian": GaussianKernel()}


class EstimatorConfig(msgspec.Struct, frozen=True, kw_only=True):
    """Bandwidths h (field and Jacobian), h̃ (second derivatives) and the bias calibration β in h = (β/n)^{1/(d+3)}."""

    h: float
    h_tilde: float
    beta: float = 0.0
    kernel: typing.Literal["gaussian"] = "gaussian"

    def __post_init__(self) -> None:
        """Validate the bandwidths."""
        if not self.h > 0:
            raise ValueError(f"bandwidth h must be positive, got {self.h}")
        if not self.h_tilde > 0:
            raise ValueError(f"bandwidth h_tilde must be positive, got {self.h_tilde}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")

    @classmethod
    def from_beta(cls, beta: float, n: int, d: int, h_tilde: float | None = None) -> "EstimatorConfig":
        """Calibrate h = (β/n)^{1/(d+3)}; h̃ defaults to h."""
        if not beta > 0:
            raise ValueError("calibrating h from beta needs beta > 0")
        h = (beta / n) ** (1 / (d + 3))
        return cls(h=h, h_tilde=h_tilde or h, beta=beta)

    @property
    def kernel_impl(self) -> GaussianKernel:
        """The kernel object behind `kernel`."""
        return KERNELS[self.kernel]


class FieldEstimate(msgspec.Struct, frozen=True):
    """V̂(x), V̂′(x) and optionally Ŵ(x) at one point."""

    value: Vector
    jacobian: Matrix
    w_term: Vector | None = None


def kernel_eval(u: typing.Any) -> float:
    """Gaussian kernel at a single offset."""
    return float(KERNELS["gaussian"].eval(as_vector(u)))


def kernel_grad(u: typing.Any) -> Vector:
    """Gradient of the Gaussian kernel at a single offset."""
    return KERNELS["gaussian"].grad(as_vector(u))


def psi_factor(v: typing.Any) -> float:
    """ψ(v) for the Gaussian kernel; raises DomainError at v = 0."""
    return KERNELS["gaussian"].psi(as_vector(v))


def _offsets(obs: ObservationSet, x: typing.Any, bandwidth: float) -> np.ndarray:
    return (as_vector(x) - obs.points) / bandwidth


def nw_estimate(obs: ObservationSet, cfg: EstimatorConfig, x: typing.Any) -> Vector:
    """V̂(x) = |G|(nh^d)^{-1} Σ K((x - X_i)/h) V_i, summed over all observations."""
    weights = cfg.kernel_impl.eval(_offsets(obs, x, cfg.h))
    return (obs.volume / (obs.n * cfg.h**obs.dim)) * (weights @ obs.values)


def nw_jacobian(obs: ObservationSet, cfg: EstimatorConfig, x: typing.Any) -> Matrix:
    """V̂′(x) = |G|(nh^{d+1})^{-1} Σ V_i ∇K((x - X_i)/h)*, entry [l, j] = ∂V̂_l/∂x_j."""
    grads = cfg.kernel_impl.grad(_offsets(obs, x, cfg.h))
    return (obs.volume / (obs.n * cfg.h ** (obs.dim + 1))) * (obs.values.T @ grads)


def nw_hessian(obs: ObservationSet, cfg: EstimatorConfig, x: typing.Any) -> Tensor3:
    """V̂″(x) with bandwidth h̃, entry [j, k, l] = |G|(nh̃^{d+2})^{-1} Σ ∂²K/∂x_j∂x_k((x - X_i)/h̃) V_i^(l)."""
    hessians = cfg.kernel_impl.hessian(_offsets(obs, x, cfg.h_tilde))
    scale = obs.volume / (obs.n * cfg.h_tilde ** (obs.dim + 2))
    return scale * np.einsum("ijk,il->jkl", hessians, obs.values)


def nw_w_term(obs: ObservationSet, cfg: EstimatorConfig, x: typing.Any) -> Vector:
    """
    Ŵ(x) = ∫K(z)⟨V̂″(x)z, z⟩dz.

    For the Gaussian kernel ∫K(z) z_j z_k dz = δ_jk, so Ŵ is the trace of V̂″, a single kernel sum with the radial
    factor (|u|² - d).
    """
    radial = cfg.kernel_impl.laplacian(_offsets(obs, x, cfg.h_tilde))
    return (obs.volume / (obs.n * cfg.h_tilde ** (obs.dim + 2))) * (radial @ obs.values)


def estimate_field(obs: ObservationSet, cfg: EstimatorConfig, x: typing.Any, with_w: bool = True) -> FieldEstimate:
    """V̂, V̂′ (and Ŵ) at x, sharing the kernel evaluations between value and Jacobian."""
    kernel = cfg.kernel_impl
    d = obs.dim
    u = _offsets(obs, x, cfg.h)
    weights = kernel.eval(u)
    base = obs.volume / (obs.n * cfg.h**d)
    value = base * (weights @ obs.values)
    jacobian = (base / cfg.h) * (obs.values.T @ (-u * weights[:, None]))
    w_term = nw_w_term(obs, cfg, x) if with_w else None
    return FieldEstimate(value=value, jacobian=jacobian, w_term=w_term)


def nw_estimate_many(obs: ObservationSet, cfg: EstimatorConfig, xs: typing.Any) -> Points:
    """V̂ at every row of xs, evaluated in row chunks."""
    targets = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    kernel = cfg.kernel_impl
    scale = obs.volume / (obs.n * cfg.h**obs.dim)
    out = np.empty((targets.shape[0], obs.dim))
    for start in range(0, targets.shape[0], ROW_CHUNK):
        block = targets[start : start + ROW_CHUNK]
        u = (block[:, None, :] - obs.points[None, :, :]) / cfg.h
        out[start : start + ROW_CHUNK] = scale * (kernel.eval(u) @ obs.values)
    return out


def noise_cov_estimate(obs: ObservationSet, cfg: EstimatorConfig) -> Matrix:
    """Σ̂ = n^{-1} Σ_j (V_j - V̂(X_j))(V_j - V̂(X_j))*."""
    if obs.n < 2:
        raise ValueError("estimating the noise covariance needs at least two observations")
    residuals = obs.values - nw_estimate_many(obs, cfg, obs.points)
    sigma = residuals.T @ residuals / obs.n
    return (sigma + sigma.T) / 2
