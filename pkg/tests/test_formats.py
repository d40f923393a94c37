import json

import msgspec
import numpy as np
import pytest
from pytest import approx
from result import Err, Ok

from fibertrack.field import Box
from fibertrack.formats import (
    CsvFormatError,
    GridSpec,
    Scenario,
    TrackSettings,
    load_scenario,
    read_observations_csv,
    read_trajectory_json,
    write_json,
    write_observations_csv,
    write_pvalue_csv,
    write_study_csv,
)
from fibertrack.inference import PointTarget, PValuePoint, SphereTarget, TestReport
from fibertrack.sim import Histogram, StudyResult, sample_observations
from fibertrack.tracker import track_curve

from .conftest import SCENARIOS


def write_text(path, text: str):
    path.write_text(text)
    return path


def test_observation_csv_round_trip(tmp_path, circle_scenario):
    obs = sample_observations(circle_scenario)
    path = write_observations_csv(obs, tmp_path / "obs.csv")
    assert path.read_text().splitlines()[0] == "x1,x2,v1,v2"

    match read_observations_csv(path, circle_scenario.domain):
        case Ok(back):
            assert np.array_equal(back.points, obs.points)
            assert np.array_equal(back.values, obs.values)
            assert back.domain == circle_scenario.domain
        case Err(e):
            raise AssertionError(e)


def test_read_small_file(tmp_path):
    path = write_text(tmp_path / "obs.csv", "x1,x2,v1,v2\n0,0,1,0\n1,0.5,0,1\n\n0.5,1,-1,0\n")
    obs = read_observations_csv(path).unwrap()
    assert obs.n == 3
    assert obs.values[2] == approx([-1.0, 0.0])
    # without a domain the bounding box of the points is used
    assert obs.domain == Box(lower=(0.0, 0.0), upper=(1.0, 1.0))


@pytest.mark.parametrize(
    ("body", "line", "fragment"),
    [
        ("x1,x2,v1,v2\n0,0,1,0\n0,0,1\n", 3, "expected 4 fields"),
        ("x1,x2,v1,v2\n0,0,1,0\n0,abc,1,0\n", 3, "abc"),
        ("x1,x2,v1,v2\n0,0,1,0\n0.5,0.5,nan,0\n", 3, "NaN"),
        ("x1,x2,v1,v2\n0,0,inf,0\n", 2, "infinite"),
        ("x1,y1,v1,v2\n0,0,1,0\n", 1, "header"),
        ("x1,x2,v1\n0,0,1\n", 1, "header"),
        ("", 1, "missing header"),
        ("x1,x2,v1,v2\n", 2, "no observations"),
    ],
)
def test_malformed_csv(tmp_path, body, line, fragment):
    path = write_text(tmp_path / "bad.csv", body)
    match read_observations_csv(path, Box.cube(1.0)):
        case Err(CsvFormatError() as e):
            assert e.line == line
            assert fragment in str(e)
            assert str(e).startswith(f"line {line}:")
        case other:
            raise AssertionError(other)


def test_csv_dimension_must_match_domain(tmp_path):
    path = write_text(tmp_path / "obs.csv", "x1,x2,x3,v1,v2,v3\n0,0,0,1,0,0\n")
    assert isinstance(read_observations_csv(path, Box.cube(1.0)), Err)


def test_csv_points_must_lie_in_the_domain(tmp_path):
    path = write_text(tmp_path / "obs.csv", "x1,x2,v1,v2\n0,0,1,0\n5,0,1,0\n")
    match read_observations_csv(path, Box.cube(1.0)):
        case Err(e):
            assert "outside the domain" in str(e)
        case Ok(_):
            raise AssertionError("expected an error")


def test_missing_csv(tmp_path):
    match read_observations_csv(tmp_path / "nope.csv"):
        case Err(FileNotFoundError() as e):
            assert "nope.csv" in str(e)
        case other:
            raise AssertionError(other)


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.json")), ids=lambda p: p.name)
def test_shipped_scenarios_load(path):
    scenario = load_scenario(path).unwrap()
    assert scenario.track.delta == 0.02
    assert scenario.noise_scale == 0.5
    cfg = scenario.track_config()
    assert cfg.sample_size_n == scenario.n
    assert scenario.domain.contains(cfg.x0)
    assert scenario.synthetic().field.name == "circular"


def test_scenario_details():
    sphere_scenario = load_scenario(SCENARIOS / "circle_sphere.json").unwrap()
    assert isinstance(sphere_scenario.target, SphereTarget)
    assert sphere_scenario.target.r == 0.5

    pmap = load_scenario(SCENARIOS / "pmap.json").unwrap()
    assert pmap.grid.points().shape == (169, 2)
    assert isinstance(pmap.target, PointTarget)

    power = load_scenario(SCENARIOS / "circle_power.json").unwrap()
    assert len(power.power_targets()) == 10
    assert power.law_config(workers=2).workers == 2


def test_scenario_seed_override():
    scenario = load_scenario(SCENARIOS / "circle.json", seed=99).unwrap()
    assert scenario.seed == 99
    assert scenario.synthetic().seed == 99


def test_scenario_errors(tmp_path):
    good = json.loads((SCENARIOS / "circle.json").read_text())

    unknown = write_text(tmp_path / "unknown.json", json.dumps({**good, "colour": "red"}))
    match load_scenario(unknown):
        case Err(e):
            assert "colour" in str(e)
        case Ok(_):
            raise AssertionError("unknown fields must be rejected")

    bad_alpha = write_text(tmp_path / "alpha.json", json.dumps({**good, "alpha": 1.5}))
    assert isinstance(load_scenario(bad_alpha), Err)

    no_bandwidth = {**good, "track": {"x0": [1.0, 0.0], "T": 1.0, "delta": 0.02}}
    assert isinstance(load_scenario(write_text(tmp_path / "bw.json", json.dumps(no_bandwidth))), Err)

    match load_scenario(tmp_path / "missing.json"):
        case Err(FileNotFoundError() as e):
            assert "missing.json" in str(e)
        case other:
            raise AssertionError(other)


def test_scenario_with_beta_calibration():
    scenario = Scenario(
        domain=Box.cube(2.0),
        n=5000,
        track=TrackSettings(x0=(1.0, 0.0), T=1.0, delta=0.02, beta=1.6),
        target=PointTarget(a=(0.0, 1.0)),
    )
    assert scenario.estimator().h == approx(0.2)
    assert scenario.estimator().beta == 1.6


def test_constant_field_needs_direction():
    with pytest.raises(ValueError):
        Scenario(
            domain=Box.cube(2.0),
            n=10,
            field="constant",
            track=TrackSettings(x0=(1.0, 0.0), T=1.0, delta=0.02, h=0.5),
            target=PointTarget(a=(0.0, 1.0)),
        )


def test_grid_spec():
    grid = GridSpec(lower=(0.0, 0.0), upper=(1.0, 2.0), steps=(2, 3))
    assert grid.points().tolist() == [[0.0, 0.0], [0.0, 1.0], [0.0, 2.0], [1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]
    with pytest.raises(ValueError):
        GridSpec(lower=(0.0,), upper=(1.0, 2.0), steps=(2, 3))


def test_trajectory_json(tmp_path, circle_scenario):
    scenario = load_scenario(SCENARIOS / "circle.json").unwrap()
    traj = track_curve(sample_observations(circle_scenario), scenario.track_config())
    path = write_json(traj, tmp_path / "traj.json")

    raw = json.loads(path.read_text())
    assert set(raw) == {"metadata", "states", "warnings"}
    assert set(raw["states"][0]) == {"k", "t", "x", "m", "c"}
    assert raw["metadata"]["stop_reason"] == traj.stop_reason

    back = read_trajectory_json(path)
    assert len(back.states) == len(traj)
    assert back.states[-1].x == traj.states[-1].x_hat.tolist()
    assert back.metadata.h == 0.85


def test_report_json_uses_draws_key(tmp_path):
    report = TestReport(
        statistic=1.0,
        critical_value=2.0,
        p_value=0.3,
        reject=False,
        tau_hat=0.5,
        k_hat=25,
        d2_min=0.01,
        law="chi2type",
        alpha=0.05,
        seed=1,
        mc_draws=20000,
    )
    raw = json.loads(write_json(report, tmp_path / "report.json").read_text())
    assert raw["draws"] == 20000
    assert "mc_draws" not in raw
    assert msgspec.json.decode(json.dumps(raw), type=TestReport) == report


def test_pvalue_csv(tmp_path):
    entries = [PValuePoint(point=np.array([0.0, 1.0]), p_value=0.5, k_hat=3)]
    path = write_pvalue_csv(entries, tmp_path / "p.csv")
    assert path.read_text().splitlines() == ["x1,x2,p", "0.0,1.0,0.5"]
    with pytest.raises(ValueError):
        write_pvalue_csv([], tmp_path / "empty.csv")


def test_study_csv(tmp_path):
    histogram = Histogram(edges=np.array([0.0, 1.0]), counts=np.array([2.0]))
    distances = StudyResult(replications=2, statistics=np.array([0.25, 0.5]), histogram=histogram, law="chi2type")
    lines = write_study_csv(distances, tmp_path / "d.csv").read_text().splitlines()
    assert lines == ["statistic", "0.25", "0.5"]

    power = StudyResult(
        replications=2,
        statistics=np.array([0.25, 0.5]),
        histogram=histogram,
        law="chi2type",
        targets=[(0.0, 1.0)],
        target_distances=[0.0],
        empirical_power=[0.05],
        theoretical_power=[0.05],
    )
    lines = write_study_csv(power, tmp_path / "p.csv").read_text().splitlines()
    assert lines == ["x1,x2,distance,empirical_power,theoretical_power", "0.0,1.0,0.0,0.05,0.05"]


def test_fields_other_than_circular():
    scenario = Scenario(
        domain=Box.cube(2.0),
        n=50,
        field="crossing",
        angle=90.0,
        track=TrackSettings(x0=(1.0, 0.0), T=1.0, delta=0.02, h=0.5),
        target=PointTarget(a=(0.0, 1.0)),
    )
    assert scenario.build_field().name == "crossing"
    assert scenario.build_field().v([[1.0, 0.1]]) == approx(np.array([[1.0, 0.0]]))
