"""Minimal SVG overlays of scenes, priors and multimodal predictions."""

from __future__ import annotations

import numpy as np

from .map_prior import CenterlinePrior
from .predictor import PredictionSet
from .scenario import Scenario

_MODE_COLORS = ("#2e7d32", "#388e3c", "#43a047", "#4caf50", "#66bb6a", "#81c784")


def _polyline(points: np.ndarray, color: str, width: float, dash: str | None = None,
              opacity: float = 1.0) -> str:
    pts = " ".join(f"{x:.2f},{-y:.2f}" for x, y in points)  # flip y: svg grows down
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" opacity="{opacity}"{dash_attr}/>')


def render_scene(
    scenario: Scenario,
    prediction: PredictionSet | None = None,
    prior: CenterlinePrior | None = None,
    obs_len: int = 20,
) -> str:
    """SVG document of lanes, agent histories, ground truth, prior centerlines
    and predicted modes (all in whatever frame the scenario is in)."""
    parts = []
    xs, ys = [], []

    def track_extent(pts):
        xs.extend(pts[:, 0].tolist())
        ys.extend(pts[:, 1].tolist())

    for lane in scenario.lane_graph.sorted_lanes():
        parts.append(_polyline(lane.waypoints, "#b0bec5", 0.3, opacity=0.8))
        track_extent(lane.waypoints)
    if prior is not None:
        for cl, ok in zip(prior.centerlines, prior.valid):
            if ok:
                parts.append(_polyline(cl, "#7e57c2", 0.5, dash="2,1"))
    for agent in scenario.agents:
        obs = agent.positions[:obs_len]
        color = "#fb8c00" if agent.is_target else "#78909c"
        parts.append(_polyline(obs, color, 0.6))
        track_extent(obs)
        if agent.is_target and len(agent) > obs_len:
            parts.append(_polyline(agent.positions[obs_len:], "#e53935", 0.6))
            track_extent(agent.positions[obs_len:])
    if prediction is not None:
        for m, traj in enumerate(prediction.trajectories):
            parts.append(_polyline(traj, _MODE_COLORS[m % len(_MODE_COLORS)], 0.5,
                                   opacity=0.9))
            track_extent(traj)

    x0, x1 = (min(xs) - 5, max(xs) + 5) if xs else (-10, 10)
    y0, y1 = (min(ys) - 5, max(ys) + 5) if ys else (-10, 10)
    header = (
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{x0:.1f} {-y1:.1f} {x1 - x0:.1f} {y1 - y0:.1f}">'
    )
    return header + "".join(parts) + "</svg>"
