import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from pytest import approx
from result import Err, Ok
from scipy import optimize

from fibertrack.field import Box, DomainError, EstimatorConfig, ObservationSet, psi_factor
from fibertrack.sim import circular, constant, linear, sample_observations, tracking_error
from fibertrack.tracker import (
    TrackConfig,
    TrackState,
    Trajectory,
    _psd_violation,
    confidence_ellipse,
    mise_objective,
    select_bandwidth_mise,
    track_curve,
    track_reference,
)


from .conftest import grid_design


def config(x0=(1.0, 0.0), T=1.0, delta=0.1, h=0.3, **kwargs) -> TrackConfig:
    return TrackConfig(x0=x0, T=T, delta=delta, bandwidth=EstimatorConfig(h=h, h_tilde=h), **kwargs)


def test_track_config_validation():
    with pytest.raises(ValueError):
        config(T=0.1, delta=0.1)
    with pytest.raises(ValueError):
        config(delta=-0.1)
    with pytest.raises(ValueError):
        config(speed_floor=0.0)
    assert config(T=1.0, delta=0.1).steps == 10
    assert config(T=1.05, delta=0.1).steps == 11


def test_constant_field_covariance_is_exact():
    field = constant([1.0, 0.0], noise_scale=1.0)
    delta = 0.1
    traj = track_reference(field, config(x0=(0.0, 0.0), T=1.0, delta=delta), volume=1.0)

    forcing = psi_factor([1.0, 0.0]) * (np.eye(2) + np.outer([1.0, 0.0], [1.0, 0.0]))
    for state in traj.states:
        assert state.c_hat == approx(state.k * delta * forcing, rel=1e-12, abs=1e-12)
        assert state.x_hat == approx([state.k * delta, 0.0], abs=1e-12)

    traces = np.trace(traj.cs, axis1=1, axis2=2)
    assert np.all(np.diff(traces) >= 0)


def test_linear_field_has_no_bias():
    traj = track_reference(linear(noise_scale=1.0), config(x0=(0.1, 0.1), T=1.0, delta=0.1))
    assert np.all(traj.ms == 0)


def test_reference_tracker_first_order():
    field = circular(noise_scale=0.5)
    runs = [track_reference(field, config(T=1.0, delta=delta), volume=16.0) for delta in (0.02, 0.01, 0.005)]
    coarse = np.max(np.linalg.norm(runs[0].xs - runs[1].xs[::2], axis=1))
    fine = np.max(np.linalg.norm(runs[1].xs - runs[2].xs[::2], axis=1))
    assert 0.3 <= fine / coarse <= 0.7


def test_track_curve_constant_field(constant_grid_obs):
    traj = track_curve(constant_grid_obs, config(x0=(0.0, 0.0), T=1.0, delta=0.1, h=0.3))
    assert len(traj) == 11
    assert traj.stop_reason == "horizon"
    assert not traj.stopped_early
    for state in traj.states:
        assert state.x_hat == approx([state.k * 0.1, 0.0], abs=1e-6)
    assert traj.times == approx(np.arange(11) * 0.1)


def test_track_curve_is_deterministic(circle_scenario):
    obs = sample_observations(circle_scenario)
    cfg = config(T=1.0, delta=0.02, h=0.85)
    first, second = track_curve(obs, cfg), track_curve(obs, cfg)
    assert np.array_equal(first.xs, second.xs)
    assert np.array_equal(first.cs, second.cs)


def test_covariance_stays_symmetric(circle_scenario):
    traj = track_curve(sample_observations(circle_scenario), config(T=2.0, delta=0.02, h=0.85))
    for c in traj.cs:
        assert np.array_equal(c, c.T)
    assert not traj.warnings


def test_stops_at_speed_floor(unit_box):
    obs = ObservationSet.from_arrays([[0.5, 0.5], [0.2, 0.2]], [[0.05, 0.0], [0.05, 0.0]], unit_box)
    traj = track_curve(obs, config(x0=(0.5, 0.5)))
    assert len(traj) == 1
    assert traj.stopped_early
    assert traj.stop_reason == "speed_floor"


def test_stops_on_domain_exit(constant_grid_obs):
    traj = track_curve(constant_grid_obs, config(x0=(0.0, 0.0), T=30.0, delta=0.1, speed_floor=1e-3))
    assert traj.stop_reason == "domain_exit"
    # the domain [-3, 3]² is inflated by 2h = 0.6
    assert traj.states[-1].x_hat[0] > 3.6
    assert traj.states[-2].x_hat[0] <= 3.6


def test_start_point_must_be_inside(constant_grid_obs):
    with pytest.raises(ValueError, match="outside the domain"):
        track_curve(constant_grid_obs, config(x0=(5.0, 0.0)))


def test_psd_violation():
    assert _psd_violation(np.eye(2)) is None
    assert _psd_violation(np.zeros((2, 2))) is None
    assert _psd_violation(np.diag([2.0, -1e-3])) == approx(-1e-3)


def state_with(c: np.ndarray, m=(0.0, 0.0)) -> TrackState:
    return TrackState(k=0, t=0.0, x_hat=np.zeros(2), m_hat=np.array(m), c_hat=c, v_hat=np.array([1.0, 0.0]))


def test_confidence_ellipse_identity():
    region = confidence_ellipse(state_with(np.eye(2)), 0.05, n=1, h=1.0, beta=0.0)
    for axis in region.axes:
        assert axis.semi_length == approx(math.sqrt(5.991464547107979))
    assert region.center == approx([0.0, 0.0])


def test_confidence_ellipse_axes_are_eigenvectors():
    c = np.array([[2.0, 0.6], [0.6, 1.0]])
    region = confidence_ellipse(state_with(c), 0.1, n=50, h=0.5)
    first, second = (axis.direction for axis in region.axes)
    assert abs(first @ second) < 1e-10
    for axis in region.axes:
        assert np.linalg.norm(c @ axis.direction - (c @ axis.direction @ axis.direction) * axis.direction) < 1e-10


def test_confidence_ellipse_degenerate_and_bias():
    region = confidence_ellipse(state_with(np.zeros((2, 2))), 0.05, n=10, h=1.0)
    assert all(axis.semi_length == 0 for axis in region.axes)
    assert region.contains([0.0, 0.0])
    assert not region.contains([1e-6, 0.0])

    shifted = confidence_ellipse(state_with(np.eye(2), m=(1.0, 0.0)), 0.05, n=4, h=1.0, beta=4.0)
    assert shifted.center == approx([-1.0, 0.0])
    plain = confidence_ellipse(state_with(np.eye(2), m=(1.0, 0.0)), 0.05, n=4, h=1.0, beta=4.0, bias_corrected=False)
    assert plain.center == approx([0.0, 0.0])

    with pytest.raises(DomainError):
        confidence_ellipse(state_with(np.eye(2)), 1.5, n=1, h=1.0)


def test_mise_closed_form_example():
    # d=2, A=4, B=1: β̄ = (d-1)A/(4B) = 1
    objective = lambda b: mise_objective(b, 4.0, 1.0, 2)  # noqa: E731
    assert objective(1.0) < objective(0.99)
    assert objective(1.0) < objective(1.01)


@given(st.floats(min_value=0.01, max_value=100), st.floats(min_value=0.01, max_value=100))
def test_mise_closed_form_matches_numeric_minimum(A, B):
    closed = A / (4 * B)
    found = optimize.minimize_scalar(
        lambda t: mise_objective(math.exp(t), A, B, 2), bounds=(-15, 15), method="bounded", options={"xatol": 1e-12}
    )
    assert math.exp(found.x) == approx(closed, rel=1e-6)


def test_select_bandwidth_mise():
    ref = track_reference(circular(noise_scale=0.5), config(T=3.0, delta=0.02, h=0.5), volume=16.0)
    match select_bandwidth_mise(ref, n=322, target=[0.0, 2.0]):
        case Ok(choice):
            assert choice.beta == approx(choice.A / (4 * choice.B))
            assert choice.h == approx((choice.beta / 322) ** (1 / 5))
            assert choice.A > 0
        case Err(e):
            raise AssertionError(e)


def test_select_bandwidth_without_bias():
    ref = track_reference(linear(noise_scale=1.0), config(x0=(0.1, 0.1), T=1.0, delta=0.1))
    assert isinstance(select_bandwidth_mise(ref, n=100), Err)


def flat_trajectory(A: float, B: float) -> Trajectory:
    """Two states one time unit apart with Tr C ≡ A and |M|² ≡ B, so the MISE integrals are A and B."""
    states = [
        TrackState(
            k=k,
            t=float(k),
            x_hat=np.array([float(k), 0.0]),
            m_hat=np.array([math.sqrt(B), 0.0]),
            c_hat=np.eye(2) * A / 2,
            v_hat=np.array([1.0, 0.0]),
        )
        for k in (0, 1)
    ]
    return Trajectory(states=states, config=config(x0=(0.0, 0.0), T=1.0, delta=0.5), n=100, volume=1.0)


def test_select_bandwidth_matches_numeric_minimum():
    rng = np.random.default_rng(50)
    for A, B in rng.uniform(0.01, 100, size=(50, 2)):
        choice = select_bandwidth_mise(flat_trajectory(A, B), n=100).unwrap()
        assert choice.A == approx(A, rel=1e-12)
        assert choice.B == approx(B, rel=1e-12)

        def objective(t: float, A: float = A, B: float = B) -> float:
            return mise_objective(math.exp(t), A, B, 2)

        found = optimize.minimize_scalar(objective, bounds=(-15, 15), method="bounded", options={"xatol": 1e-12})
        assert choice.beta == approx(math.exp(found.x), rel=1e-6)


def test_trajectory_needs_a_state():
    with pytest.raises(ValueError):
        Trajectory(states=[], config=config(), n=1, volume=1.0)


def covers_curve(region, curve) -> bool:
    """Does the ellipse contain at least one of the (densely sampled) curve points?"""
    reach = max(axis.semi_length for axis in region.axes)
    near = curve[np.linalg.norm(curve - region.center, axis=1) <= reach + 1e-12]
    return any(region.contains(point) for point in near)


@pytest.mark.slow
def test_circle_tracking_and_ellipse_coverage(circle_scenario):
    """Circular field, n=322, h=0.85, δ=0.02, t ≤ π, 200 replications."""
    cfg = config(T=math.pi, delta=0.02, h=0.85)
    angles = np.linspace(0.0, math.pi + 0.5, 4000)
    circle = np.column_stack([np.cos(angles), np.sin(angles)])

    near_circle = covered = checked = 0
    worst_gap = 0.0
    for rep in range(200):
        traj = track_curve(sample_observations(circle_scenario, rep), cfg)
        gap = float(np.max(np.abs(np.linalg.norm(traj.xs, axis=1) - 1)))
        worst_gap = max(worst_gap, gap)
        near_circle += gap < 0.3
        for state in traj.states[10::10]:
            region = confidence_ellipse(state, 0.05, traj.n, 0.85, bias_corrected=False)
            covered += covers_curve(region, circle)
            checked += 1

    assert near_circle >= 180
    assert worst_gap < 0.4
    assert covered / checked >= 0.9


@pytest.mark.slow
def test_dense_noiseless_tracking_approaches_reference():
    # deterministic grid of 8100 points on [-2, 2]², noiseless
    points = grid_design(2.0, 4 / 90)
    field = circular()
    obs = ObservationSet.from_arrays(points, field.v(points), Box.cube(2.0))
    cfg = config(T=math.pi, delta=0.02, h=0.12)
    estimated = track_curve(obs, cfg)
    reference = track_reference(field, cfg, volume=16.0)
    assert len(estimated) == len(reference)
    assert np.max(np.linalg.norm(estimated.xs - reference.xs, axis=1)) < 0.05
    assert tracking_error(reference, field) < 0.1
