import numpy as np
import pytest

from fibertrack.field import EstimatorConfig
from fibertrack.inference import PValuePoint
from fibertrack.plots import emit_plot
from fibertrack.sim import Histogram, StudyResult
from fibertrack.tracker import TrackConfig, TrackState, Trajectory


@pytest.fixture
def two_state_trajectory() -> Trajectory:
    cfg = TrackConfig(x0=(1.0, 0.0), T=0.1, delta=0.05, bandwidth=EstimatorConfig(h=0.85, h_tilde=0.85))
    states = [
        TrackState(
            k=0,
            t=0.0,
            x_hat=np.array([1.0, 0.0]),
            m_hat=np.zeros(2),
            c_hat=np.zeros((2, 2)),
            v_hat=np.array([0.0, 1.0]),
        ),
        TrackState(
            k=1,
            t=0.05,
            x_hat=np.array([1.0, 0.05]),
            m_hat=np.array([0.01, 0.0]),
            c_hat=np.array([[0.02, 0.005], [0.005, 0.01]]),
            v_hat=np.array([0.0, 1.0]),
        ),
    ]
    return Trajectory(states=states, config=cfg, n=322, volume=16.0)


def histogram_study(**kwargs) -> StudyResult:
    statistics = np.random.default_rng(0).normal(size=200)
    counts, edges = np.histogram(statistics, bins=30)
    return StudyResult(
        replications=200,
        statistics=statistics,
        histogram=Histogram(edges=edges, counts=counts.astype(float)),
        **{"law": "normal", **kwargs},
    )


def test_trajectory_svg(tmp_path, two_state_trajectory):
    out = emit_plot(two_state_trajectory, tmp_path / "traj.svg", every=1)
    text = out.read_text()
    assert text.lstrip().startswith("<?xml")
    assert "<svg" in text


def test_svg_is_deterministic(tmp_path, two_state_trajectory):
    first = emit_plot(two_state_trajectory, tmp_path / "a.svg", every=1, reference=np.array([[1.0, 0.0], [1.0, 0.1]]))
    second = emit_plot(two_state_trajectory, tmp_path / "b.svg", every=1, reference=np.array([[1.0, 0.0], [1.0, 0.1]]))
    assert first.read_bytes() == second.read_bytes()


def test_histogram_svg(tmp_path):
    assert emit_plot(histogram_study(), tmp_path / "hist.svg").exists()
    reference = np.random.default_rng(1).chisquare(1, size=2000)
    assert emit_plot(histogram_study(law="chi2type", reference_samples=reference), tmp_path / "chi.svg").exists()


def test_empty_histogram_raises(tmp_path):
    nothing = Histogram(edges=np.array([0.0]), counts=np.array([]))
    empty = StudyResult(replications=0, statistics=np.array([]), histogram=nothing, law="normal")
    with pytest.raises(ValueError):
        emit_plot(empty, tmp_path / "empty.svg")
    assert not (tmp_path / "empty.svg").exists()


def test_power_svg(tmp_path):
    study = histogram_study(
        law="chi2type",
        targets=[(0.0, 1.0), (0.0, 1.5), (0.0, 2.0)],
        target_distances=[0.0, 0.5, 1.0],
        empirical_power=[0.05, 0.6, 1.0],
        theoretical_power=[0.05, 0.7, 1.0],
        alpha=0.05,
    )
    assert emit_plot(study, tmp_path / "power.svg").exists()


def test_pvalue_map_svg(tmp_path):
    corners = [(x, y) for x in (0.0, 1.0) for y in (0.0, 1.0)]
    entries = [PValuePoint(point=np.array(c), p_value=sum(c) / 2, k_hat=0) for c in corners]
    assert emit_plot(entries, tmp_path / "map.svg").exists()
    with pytest.raises(ValueError):
        emit_plot([], tmp_path / "none.svg")
    with pytest.raises(TypeError):
        emit_plot([1, 2], tmp_path / "ints.svg")


def test_unknown_object(tmp_path):
    with pytest.raises(TypeError):
        emit_plot("hello", tmp_path / "x.svg")
