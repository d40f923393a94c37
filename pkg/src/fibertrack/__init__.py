"""This file exposes the main package functions."""

# SPDX-FileCopyrightText: 2024-present Robin van der Noord <robinvandernoord@gmail.com>
#
# SPDX-License-Identifier: MIT

from .field import Box, DomainError, EstimatorConfig, ObservationSet, nw_estimate, nw_jacobian, nw_w_term
from .inference import (
    FunctionalTarget,
    LimitLawConfig,
    PointTarget,
    SphereTarget,
    TestReport,
    test_functional_min,
    test_point_reach,
    test_sphere_reach,
)
from .sim import SyntheticScenario, circular, mc_distance_study, mc_power_study, sample_observations
from .tracker import TrackConfig, Trajectory, confidence_ellipse, select_bandwidth_mise, track_curve, track_reference

__all__ = [
    "Box",
    "DomainError",
    "EstimatorConfig",
    "FunctionalTarget",
    "LimitLawConfig",
    "ObservationSet",
    "PointTarget",
    "SphereTarget",
    "SyntheticScenario",
    "TestReport",
    "TrackConfig",
    "Trajectory",
    "circular",
    "confidence_ellipse",
    "mc_distance_study",
    "mc_power_study",
    "nw_estimate",
    "nw_jacobian",
    "nw_w_term",
    "sample_observations",
    "select_bandwidth_mise",
    "test_functional_min",
    "test_point_reach",
    "test_sphere_reach",
    "track_curve",
    "track_reference",
]
