"""Interpretable physical context: plausible centerlines and area points.

Raw lane-graph candidates near the target are truncated to the travelled
distance implied by its kinematic state, resampled to the prediction horizon,
and surrounded by a perturbed point cloud. The model only ever sees these
priors, never the map itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import _kernels
from .errors import MalformedInput, NoLaneInRange, NoValidCenterline
from .kinematics import KinematicState, ctra_distance
from .scenario import LaneGraph, PRED_LEN, Scenario

MAX_CANDIDATES = 3
SEARCH_RADIUS = 50.0  # meters; beyond this the prior degrades to social-only
SEED_LANES = 4  # nearest lanes used as search roots
EXTEND_SLACK = 10.0  # meters of extra length beyond the travelled distance
HEADING_WEIGHT = 2.0
DEFAULT_AREA_POINTS = 200
DEFAULT_AREA_SIGMA = 0.2
DEFAULT_HORIZON = 3.0  # seconds


@dataclass(frozen=True)
class Centerline:
    """Ordered waypoint polyline with lane-id provenance."""

    waypoints: np.ndarray  # (P, 2) meters
    source_lane_ids: tuple[str, ...] = ()

    def __post_init__(self):
        wp = np.ascontiguousarray(self.waypoints, dtype=np.float64)
        if wp.ndim != 2 or wp.shape[1] != 2 or wp.shape[0] < 2:
            raise MalformedInput("centerline needs >= 2 waypoints")
        if not np.all(np.isfinite(wp)):
            raise MalformedInput("centerline has non-finite waypoint")
        if np.any(np.all(np.diff(wp, axis=0) == 0.0, axis=1)):
            raise MalformedInput("centerline has repeated consecutive waypoint")
        wp.flags.writeable = False
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "source_lane_ids", tuple(self.source_lane_ids))

    @property
    def arc_length(self) -> float:
        return float(_kernels.cumulative_arclength(self.waypoints)[-1])


@dataclass(frozen=True)
class CenterlinePrior:
    """Fixed-size physical context: M resampled centerlines (zero-padded when
    fewer are available) plus r perturbed plausible-area points."""

    centerlines: np.ndarray  # (M, pred_len, 2)
    valid: np.ndarray  # (M,) bool
    plausible_points: np.ndarray  # (r, 2)
    rng_seed: int = 0

    def __post_init__(self):
        cl = np.ascontiguousarray(self.centerlines, dtype=np.float64)
        valid = np.ascontiguousarray(self.valid, dtype=bool)
        pts = np.ascontiguousarray(self.plausible_points, dtype=np.float64)
        if cl.ndim != 3 or cl.shape[0] != valid.shape[0] or cl.shape[2] != 2:
            raise MalformedInput("prior centerlines must be (M, pred_len, 2)")
        if np.any(cl[~valid] != 0.0):
            raise MalformedInput("padded centerline entries must be all-zero")
        for a in (cl, pts):
            a.flags.writeable = False
        object.__setattr__(self, "centerlines", cl)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "plausible_points", pts)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


def _heading_from_obs(target_obs: np.ndarray) -> np.ndarray:
    d = target_obs[-1] - target_obs[-2]
    n = float(np.hypot(d[0], d[1]))
    if n < 1e-6:
        return np.array([0.0, 1.0])
    return d / n


def _polyline_direction(points: np.ndarray, idx: int) -> np.ndarray:
    j = min(idx, points.shape[0] - 2)
    d = points[j + 1] - points[j]
    n = float(np.hypot(d[0], d[1]))
    return d / n if n > 0.0 else np.array([0.0, 1.0])


def _join(polylines: list[np.ndarray]) -> np.ndarray:
    """Concatenate lane waypoints, dropping duplicated joint points."""
    out = [polylines[0]]
    for nxt in polylines[1:]:
        if np.allclose(out[-1][-1], nxt[0]):
            nxt = nxt[1:]
        if nxt.shape[0]:
            out.append(nxt)
    return np.vstack(out)


def candidate_centerlines(
    graph: LaneGraph,
    target_obs: np.ndarray,
    max_candidates: int = MAX_CANDIDATES,
    extend_distance: float = 100.0,
    search_radius: float = SEARCH_RADIUS,
) -> list[Centerline]:
    """Successor-chained centerline candidates near the last observation.

    The nearest SEED_LANES lanes are extended depth-first along successors
    until each path covers ``extend_distance`` past the agent; paths are then
    scored by proximity and heading alignment and the best
    ``max_candidates`` distinct ones returned.
    """
    if len(graph) == 0:
        raise NoLaneInRange("empty lane graph")
    obs = np.asarray(target_obs, dtype=np.float64)
    if obs.shape[0] < 2:
        raise MalformedInput("need >= 2 observed positions")
    query = obs[-1]
    heading = _heading_from_obs(obs)

    lanes = graph.sorted_lanes()
    seed_dist = [_kernels.min_point_distance(lane.waypoints, query) for lane in lanes]
    order = sorted(range(len(lanes)), key=lambda i: (seed_dist[i], lanes[i].lane_id))
    if seed_dist[order[0]] > search_radius:
        raise NoLaneInRange(f"nearest lane at {seed_dist[order[0]]:.1f} m")
    seeds = [lanes[i] for i in order[: SEED_LANES] if seed_dist[i] <= search_radius]

    paths: list[tuple[str, ...]] = []

    def extend(path: list[str], length_left: float):
        lane = graph.lanes[path[-1]]
        cum = _kernels.cumulative_arclength(lane.waypoints)
        remaining = length_left - float(cum[-1])
        succs = sorted(lane.successors)
        if remaining <= 0.0 or not succs:
            paths.append(tuple(path))
            return
        for s in succs:
            if s in path:  # cycles
                paths.append(tuple(path))
                continue
            extend(path + [s], remaining)

    for seed in seeds:
        start_idx = _kernels.nearest_waypoint(seed.waypoints, query)
        cum = _kernels.cumulative_arclength(seed.waypoints)
        # only the stretch ahead of the agent counts toward the target length
        extend([seed.lane_id], extend_distance + float(cum[start_idx]))

    scored = []
    seen: set[bytes] = set()
    for path in paths:
        pts = _join([graph.lanes[lid].waypoints for lid in path])
        key = np.round(pts, 6).tobytes()
        if key in seen:
            continue
        seen.add(key)
        idx = _kernels.nearest_waypoint(pts, query)
        dist = float(np.hypot(*(pts[idx] - query)))
        if dist > search_radius:
            continue
        cos_gap = float(np.dot(_polyline_direction(pts, idx), heading))
        score = -dist - HEADING_WEIGHT * (1.0 - cos_gap)
        scored.append((score, idx, path, pts))

    scored.sort(key=lambda item: (-item[0], item[1], item[2]))
    return [
        Centerline(waypoints=pts, source_lane_ids=path)
        for _, _, path, pts in scored[:max_candidates]
    ]


def truncate_centerline(
    c: Centerline,
    state: KinematicState,
    target_last_obs: np.ndarray,
    horizon: float = DEFAULT_HORIZON,
) -> Centerline:
    """Clip a centerline to [nearest waypoint, travelled-distance end-point].

    The end index is the first waypoint where the accumulated inter-waypoint
    distance reaches the constant-acceleration travelled distance; if the lane
    ends first the last waypoint is kept.
    """
    pts = c.waypoints
    start = _kernels.nearest_waypoint(pts, np.asarray(target_last_obs, dtype=np.float64))
    start = min(start, pts.shape[0] - 2)
    cum = _kernels.cumulative_arclength(pts)
    end = _kernels.truncation_end(cum, start, ctra_distance(state, horizon))
    end = max(end, start + 1)
    return Centerline(waypoints=pts[start : end + 1], source_lane_ids=c.source_lane_ids)


def resample_cubic(c: Centerline, n: int = PRED_LEN) -> Centerline:
    """Resample to n points uniform in arc length, endpoints preserved.

    Cubic spline per axis when >= 4 waypoints are available, otherwise
    piecewise linear.
    """
    pts = c.waypoints
    cum = _kernels.cumulative_arclength(pts)
    if pts.shape[0] >= 4:
        s = np.linspace(0.0, float(cum[-1]), n)
        spline_x = CubicSpline(cum, pts[:, 0])
        spline_y = CubicSpline(cum, pts[:, 1])
        out = np.stack([spline_x(s), spline_y(s)], axis=1)
        out[0], out[-1] = pts[0], pts[-1]
    else:
        out = _kernels.resample_linear(pts, cum, n)
    return Centerline(waypoints=out, source_lane_ids=c.source_lane_ids)


def sample_plausible_area(
    centerlines: list[Centerline] | np.ndarray,
    r: int = DEFAULT_AREA_POINTS,
    sigma: float = DEFAULT_AREA_SIGMA,
    seed: int = 0,
) -> np.ndarray:
    """r points around the centerlines, perturbed by N(0, sigma^2) per axis.

    Noise is drawn in each point's local tangent/normal frame (isotropic, so
    the distribution is unchanged) which keeps sampling equivariant to rigid
    transforms of the geometry; draws are clipped at 3 sigma so every sample
    stays near some centerline point.
    """
    polylines = [c.waypoints if isinstance(c, Centerline) else np.asarray(c) for c in centerlines]
    polylines = [p for p in polylines if p.shape[0] >= 2]
    if not polylines:
        raise NoValidCenterline("no valid centerline to sample around")
    if r < 1:
        raise MalformedInput("r must be >= 1")
    rng = np.random.default_rng(seed)
    out = np.empty((r, 2))
    for i in range(r):
        pts = polylines[int(rng.integers(len(polylines)))]
        j = int(rng.integers(pts.shape[0]))
        tangent = _polyline_direction(pts, j)
        normal = np.array([-tangent[1], tangent[0]])
        n1, n2 = np.clip(rng.normal(0.0, sigma, size=2), -3.0 * sigma, 3.0 * sigma)
        out[i] = pts[j] + n1 * tangent + n2 * normal
    return out


def build_prior(
    scenario: Scenario,
    state: KinematicState,
    max_candidates: int = MAX_CANDIDATES,
    r: int = DEFAULT_AREA_POINTS,
    sigma: float = DEFAULT_AREA_SIGMA,
    horizon: float = DEFAULT_HORIZON,
    pred_len: int = PRED_LEN,
    obs_len: int | None = None,
    seed: int = 0,
) -> CenterlinePrior:
    """Candidate -> truncate -> resample pipeline, padded to a fixed size.

    When no lane is in range the prior is fully padded and the model falls
    back to social-only context.
    """
    from .scenario import OBS_LEN

    obs_len = OBS_LEN if obs_len is None else obs_len
    target_obs = scenario.target.positions[:obs_len]
    travelled = ctra_distance(state, horizon)
    try:
        cands = candidate_centerlines(
            scenario.lane_graph,
            target_obs,
            max_candidates=max_candidates,
            extend_distance=travelled + EXTEND_SLACK,
        )
    except NoLaneInRange:
        cands = []

    cls = np.zeros((max_candidates, pred_len, 2))
    valid = np.zeros(max_candidates, dtype=bool)
    resampled: list[Centerline] = []
    for i, cand in enumerate(cands[:max_candidates]):
        trunc = truncate_centerline(cand, state, target_obs[-1], horizon)
        smooth = resample_cubic(trunc, pred_len)
        cls[i] = smooth.waypoints
        valid[i] = True
        resampled.append(smooth)

    if resampled:
        area = sample_plausible_area(resampled, r=r, sigma=sigma, seed=seed)
    else:
        area = np.zeros((r, 2))
    return CenterlinePrior(centerlines=cls, valid=valid, plausible_points=area, rng_seed=seed)


def prior_payload(prior: CenterlinePrior, state: KinematicState) -> dict:
    """JSON-serializable form used by the preprocess CLI."""
    return {
        "centerlines": prior.centerlines.tolist(),
        "valid": prior.valid.tolist(),
        "area": prior.plausible_points.tolist(),
        "state": {"v": state.speed, "a": state.accel},
    }


def prior_from_payload(doc: dict) -> tuple[CenterlinePrior, KinematicState]:
    prior = CenterlinePrior(
        centerlines=np.asarray(doc["centerlines"], dtype=np.float64),
        valid=np.asarray(doc["valid"], dtype=bool),
        plausible_points=np.asarray(doc["area"], dtype=np.float64),
    )
    st = doc.get("state", {})
    state = KinematicState(speed=float(st.get("v", 0.0)), accel=float(st.get("a", 0.0)))
    return prior, state
