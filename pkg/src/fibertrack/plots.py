"""
SVG figures: tracked curve with confidence ellipses, study histograms, power curves and p-value maps.

Figures are built on a bare `matplotlib.figure.Figure` (no pyplot state) and written with a fixed hash salt and no
date metadata, so the same input always gives the same bytes.
"""

import functools
import math
import typing
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Ellipse
from scipy import stats

from ._constants import DEFAULT_ELLIPSE_EVERY
from .inference import PValuePoint
from .sim import StudyResult
from .tracker import Trajectory, confidence_ellipse

SVG_RC = {"svg.hashsalt": "fibertrack", "svg.fonttype": "path", "path.simplify": False}


def _save(fig: Figure, out: str | Path) -> Path:
    out = Path(out)
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(out, format="svg", metadata={"Date": None})
    return out


@functools.singledispatch
def emit_plot(obj: typing.Any, out: str | Path, **options: typing.Any) -> Path:
    """Write `obj` as an SVG figure to `out`."""
    raise TypeError(f"don't know how to plot {type(obj).__name__}")


@emit_plot.register
def _(
    traj: Trajectory,
    out: str | Path,
    every: int = DEFAULT_ELLIPSE_EVERY,
    alpha: float = 0.05,
    bias_corrected: bool = True,
    reference: np.ndarray | None = None,
    **_: typing.Any,
) -> Path:
    """Tracked curve (first two coordinates) with (1-α) ellipses at every `every`-th state."""
    if len(traj) == 0:
        raise ValueError("nothing to plot: the trajectory is empty")
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    xs = traj.xs
    ax.plot(xs[:, 0], xs[:, 1], color="black", linewidth=1.2, label="estimated curve")
    if reference is not None:
        ax.plot(reference[:, 0], reference[:, 1], color="grey", linestyle="--", linewidth=1, label="true curve")

    if traj.dim == 2 and traj.n > 0:
        bandwidth = traj.config.bandwidth
        for state in traj.states[every::every]:
            region = confidence_ellipse(state, alpha, traj.n, bandwidth.h, bandwidth.beta, bias_corrected)
            major = region.axes[-1]
            angle = math.degrees(math.atan2(major.direction[1], major.direction[0]))
            ax.add_patch(
                Ellipse(
                    tuple(region.center),
                    width=2 * major.semi_length,
                    height=2 * region.axes[0].semi_length,
                    angle=angle,
                    fill=False,
                    edgecolor="tab:blue",
                    linewidth=0.8,
                )
            )

    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.legend(loc="best")
    return _save(fig, out)


def _histogram_figure(study: StudyResult) -> Figure:
    counts, edges = study.histogram.counts, study.histogram.edges
    if len(counts) == 0 or float(np.sum(counts)) == 0.0:
        raise ValueError("nothing to plot: the histogram is empty")
    fig = Figure(figsize=(7, 4.5))
    ax = fig.add_subplot()
    widths = np.diff(edges)
    density = counts / (float(np.sum(counts)) * widths)
    ax.bar(edges[:-1], density, width=widths, align="edge", color="lightgrey", edgecolor="black", linewidth=0.5)

    grid = np.linspace(edges[0], edges[-1], 400)
    if study.law == "normal":
        ax.plot(grid, stats.norm.pdf(grid), color="tab:red", label="N(0, 1)")
    elif study.reference_samples is not None:
        reference, ref_edges = np.histogram(study.reference_samples, bins=edges, density=True)
        ax.stairs(reference, ref_edges, color="tab:red", label="limit law")
    ax.set_xlabel("statistic")
    ax.set_ylabel("density")
    ax.set_title(f"{study.replications} replications")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best")
    return fig


def _power_figure(study: StudyResult) -> Figure:
    distances = np.asarray(study.target_distances or [], dtype=np.float64)
    if len(distances) == 0:
        raise ValueError("nothing to plot: the power study has no targets")
    fig = Figure(figsize=(7, 4.5))
    ax = fig.add_subplot()
    ax.plot(distances, study.empirical_power, marker="o", color="black", label="empirical")
    if study.theoretical_power is not None:
        ax.plot(distances, study.theoretical_power, marker="s", linestyle="--", color="tab:red", label="asymptotic")
    if study.alpha is not None:
        ax.axhline(study.alpha, color="grey", linewidth=0.6)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("distance to the curve")
    ax.set_ylabel("power")
    ax.legend(loc="lower right")
    return fig


@emit_plot.register
def _(study: StudyResult, out: str | Path, **_: typing.Any) -> Path:
    """Histogram with the reference law, or the empirical/asymptotic power pair for power studies."""
    fig = _power_figure(study) if study.empirical_power is not None else _histogram_figure(study)
    return _save(fig, out)


@emit_plot.register
def _(entries: list, out: str | Path, **_: typing.Any) -> Path:
    """p-value map as coloured squares on the first two coordinates."""
    if not entries:
        raise ValueError("nothing to plot: the p-value map is empty")
    if not all(isinstance(e, PValuePoint) for e in entries):
        raise TypeError("only lists of p-value map entries can be plotted")
    points = np.array([e.point for e in entries])
    p_values = np.array([e.p_value for e in entries])
    fig = Figure(figsize=(6, 5))
    ax = fig.add_subplot()
    mesh = ax.scatter(points[:, 0], points[:, 1], c=p_values, marker="s", cmap="viridis", vmin=0.0, vmax=1.0)
    fig.colorbar(mesh, ax=ax, label="p-value")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    return _save(fig, out)
