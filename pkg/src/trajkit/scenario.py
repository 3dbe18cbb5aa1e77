"""Traffic scenarios: domain types, parsing, normalization and synthesis.

A scenario holds the 2D tracks of every agent observed over the full horizon
(20 observed + 30 future frames at 10 Hz by default), a lane graph, and a
single designated target agent. All values are immutable after construction;
parsing and generation are pure functions of their inputs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import InsufficientFrames, MalformedInput, NoTargetAgent, TooShort

OBS_LEN = 20
PRED_LEN = 30
DT = 0.1

_FORMATS = ("native_json", "argoverse_csv")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class AgentTrack:
    """One agent's 2D world-frame positions, one row per 10 Hz frame."""

    agent_id: str
    positions: np.ndarray  # (T, 2) meters
    is_target: bool = False

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise MalformedInput(f"track {self.agent_id}: positions must be (T, 2)")
        if not np.all(np.isfinite(pos)):
            raise MalformedInput(f"track {self.agent_id}: non-finite coordinate")
        object.__setattr__(self, "positions", _readonly(pos))

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class Lane:
    """One lane record: ordered midline waypoints plus graph connectivity."""

    lane_id: str
    waypoints: np.ndarray  # (P, 2) meters
    successors: tuple[str, ...] = ()
    predecessors: tuple[str, ...] = ()

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=np.float64)
        if wp.ndim != 2 or wp.shape[1] != 2 or wp.shape[0] < 2:
            raise MalformedInput(f"lane {self.lane_id}: needs >= 2 waypoints")
        if not np.all(np.isfinite(wp)):
            raise MalformedInput(f"lane {self.lane_id}: non-finite waypoint")
        if np.any(np.all(np.diff(wp, axis=0) == 0.0, axis=1)):
            raise MalformedInput(f"lane {self.lane_id}: repeated consecutive waypoint")
        object.__setattr__(self, "waypoints", _readonly(wp))
        object.__setattr__(self, "successors", tuple(self.successors))
        object.__setattr__(self, "predecessors", tuple(self.predecessors))


@dataclass(frozen=True)
class LaneGraph:
    """Set of lanes keyed by id; successor/predecessor ids must resolve."""

    lanes: dict[str, Lane]

    def __post_init__(self):
        lanes = dict(self.lanes)
        for lane in lanes.values():
            for ref in (*lane.successors, *lane.predecessors):
                if ref not in lanes:
                    raise MalformedInput(f"lane {lane.lane_id}: dangling reference {ref}")
        object.__setattr__(self, "lanes", lanes)

    def __len__(self) -> int:
        return len(self.lanes)

    def sorted_lanes(self) -> list[Lane]:
        return [self.lanes[k] for k in sorted(self.lanes)]


@dataclass(frozen=True)
class Scenario:
    """One traffic scene: agent tracks, lane graph, exactly one target."""

    scenario_id: str
    agents: tuple[AgentTrack, ...]
    lane_graph: LaneGraph
    city_tag: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        agents = tuple(self.agents)
        targets = [a for a in agents if a.is_target]
        if len(targets) != 1:
            raise NoTargetAgent(f"scenario {self.scenario_id}: {len(targets)} target agents")
        lengths = {len(a) for a in agents}
        if len(lengths) != 1:
            raise MalformedInput(f"scenario {self.scenario_id}: mixed frame counts {lengths}")
        object.__setattr__(self, "agents", agents)

    @property
    def target(self) -> AgentTrack:
        return next(a for a in self.agents if a.is_target)

    @property
    def n_frames(self) -> int:
        return len(self.agents[0])


@dataclass(frozen=True)
class TargetFrame:
    """Rigid world->target transform: rotate then translate so the target's
    last observed pose sits at the origin heading +y."""

    rotation: np.ndarray  # (2, 2)
    origin: np.ndarray  # (2,)

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        org = np.asarray(self.origin, dtype=np.float64)
        if rot.shape != (2, 2) or org.shape != (2,):
            raise MalformedInput("TargetFrame: rotation must be (2,2), origin (2,)")
        if not np.allclose(rot @ rot.T, np.eye(2), atol=1e-9):
            raise MalformedInput("TargetFrame: rotation not orthonormal")
        if not math.isclose(float(np.linalg.det(rot)), 1.0, abs_tol=1e-9):
            raise MalformedInput("TargetFrame: rotation must have det +1")
        object.__setattr__(self, "rotation", _readonly(rot))
        object.__setattr__(self, "origin", _readonly(org))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.origin) @ self.rotation.T

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation + self.origin


# --- parsing ------------------------------------------------------------------


def parse_scenario(
    raw: bytes | str,
    format: str = "native_json",
    obs_len: int = OBS_LEN,
    pred_len: int = PRED_LEN,
) -> Scenario:
    """Parse a byte stream into a Scenario.

    Agents missing any frame of the target's horizon are dropped. The target
    must cover at least ``obs_len`` frames; train/val scenarios carry
    ``obs_len + pred_len`` frames, test scenarios ``obs_len``.
    """
    if format not in _FORMATS:
        raise MalformedInput(f"unknown format {format!r}")
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    if format == "native_json":
        return _parse_native_json(text, obs_len, pred_len)
    return _parse_argoverse_csv(text, obs_len, pred_len)


def _full_horizon(n: int, obs_len: int, pred_len: int) -> int:
    """Frame count an agent must cover: full horizon, or obs-only for test."""
    return obs_len + pred_len if n >= obs_len + pred_len else obs_len


def _parse_native_json(text: str, obs_len: int, pred_len: int) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "agents" not in doc:
        raise MalformedInput("native_json: missing 'agents'")
    try:
        raw_agents = [
            (str(a["id"]), bool(a.get("target", False)), np.asarray(a["xy"], dtype=np.float64))
            for a in doc["agents"]
        ]
        lanes = {
            str(l["id"]): Lane(
                lane_id=str(l["id"]),
                waypoints=np.asarray(l["waypoints"], dtype=np.float64),
                successors=tuple(str(s) for s in l.get("successors", ())),
                predecessors=tuple(str(p) for p in l.get("predecessors", ())),
            )
            for l in doc.get("lanes", ())
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"native_json: {exc}") from exc

    targets = [a for a in raw_agents if a[1]]
    if len(targets) != 1:
        raise NoTargetAgent(f"native_json: {len(targets)} target agents")
    tgt_frames = targets[0][2].shape[0]
    if tgt_frames < obs_len:
        raise InsufficientFrames(f"target has {tgt_frames} frames, need >= {obs_len}")
    horizon = _full_horizon(tgt_frames, obs_len, pred_len)

    tracks = [
        AgentTrack(agent_id=aid, positions=xy[:horizon], is_target=tgt)
        for aid, tgt, xy in raw_agents
        if tgt or xy.shape[0] >= horizon
    ]
    return Scenario(
        scenario_id=str(doc.get("scenario_id", "unnamed")),
        agents=tuple(tracks),
        lane_graph=LaneGraph(lanes),
        city_tag=doc.get("city"),
    )


def _parse_argoverse_csv(text: str, obs_len: int, pred_len: int) -> Scenario:
    reader = csv.DictReader(io.StringIO(text))
    required = {"TIMESTAMP", "TRACK_ID", "OBJECT_TYPE", "X", "Y"}
    if reader.fieldnames is None or not required.issubset(set(reader.fieldnames)):
        raise MalformedInput(f"argoverse_csv: header must contain {sorted(required)}")

    by_track: dict[str, dict[float, tuple[float, float]]] = {}
    types: dict[str, str] = {}
    city = None
    try:
        for row in reader:
            ts = float(row["TIMESTAMP"])
            tid = row["TRACK_ID"]
            by_track.setdefault(tid, {})[ts] = (float(row["X"]), float(row["Y"]))
            types[tid] = row["OBJECT_TYPE"]
            city = row.get("CITY_NAME", city)
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"argoverse_csv: {exc}") from exc
    if not by_track:
        raise MalformedInput("argoverse_csv: no data rows")

    agent_ids = [tid for tid, t in types.items() if t == "AGENT"]
    if len(agent_ids) != 1:
        raise NoTargetAgent(f"argoverse_csv: {len(agent_ids)} AGENT tracks")
    target_id = agent_ids[0]
    timestamps = sorted(by_track[target_id])
    if len(timestamps) < obs_len:
        raise InsufficientFrames(f"target has {len(timestamps)} frames, need >= {obs_len}")
    horizon = _full_horizon(len(timestamps), obs_len, pred_len)
    timestamps = timestamps[:horizon]

    tracks = []
    for tid in sorted(by_track):
        obs = by_track[tid]
        if tid != target_id and any(ts not in obs for ts in timestamps):
            continue  # full-history agents only
        tracks.append(
            AgentTrack(
                agent_id=tid,
                positions=np.array([obs[ts] for ts in timestamps]),
                is_target=tid == target_id,
            )
        )
    return Scenario(
        scenario_id=f"argoverse-{target_id}",
        agents=tuple(tracks),
        lane_graph=LaneGraph({}),
        city_tag=city,
    )


def serialize_scenario(s: Scenario) -> str:
    """Inverse of native_json parsing; stable key order for byte-identical output."""
    doc = {
        "scenario_id": s.scenario_id,
        "agents": [
            {"id": a.agent_id, "target": a.is_target, "xy": a.positions.tolist()}
            for a in s.agents
        ],
        "lanes": [
            {
                "id": lane.lane_id,
                "waypoints": lane.waypoints.tolist(),
                "successors": list(lane.successors),
                "predecessors": list(lane.predecessors),
            }
            for lane in s.lane_graph.sorted_lanes()
        ],
    }
    if s.city_tag is not None:
        doc["city"] = s.city_tag
    return json.dumps(doc, sort_keys=True)


# --- normalization ------------------------------------------------------------


def heading_rotation(last_two: np.ndarray) -> np.ndarray:
    """Rotation aligning the displacement of the last two points with +y.

    Falls back to the identity when the displacement norm is below 1e-6 m
    (stopped agent: the observation frame defines no orientation).
    """
    d = np.asarray(last_two[1], dtype=np.float64) - np.asarray(last_two[0], dtype=np.float64)
    norm = float(np.hypot(d[0], d[1]))
    if norm < 1e-6:
        return np.eye(2)
    c, s = d[0] / norm, d[1] / norm  # heading unit vector (cos phi, sin phi)
    # rotate by (pi/2 - phi) so the heading maps onto (0, 1)
    return np.array([[s, -c], [c, s]])


def to_target_frame(s: Scenario, obs_len: int = OBS_LEN) -> tuple[Scenario, TargetFrame]:
    """Rigidly move the scene so the target sits at the origin heading +y at
    its last observed frame. Returns the transformed scenario and the frame."""
    tgt = s.target
    if len(tgt) < obs_len:
        raise InsufficientFrames(f"target has {len(tgt)} frames, need >= {obs_len}")
    origin = tgt.positions[obs_len - 1]
    rot = heading_rotation(tgt.positions[obs_len - 2 : obs_len])
    frame = TargetFrame(rotation=rot, origin=origin)

    agents = tuple(
        replace(a, positions=frame.apply(a.positions)) for a in s.agents
    )
    lanes = {
        lid: replace(lane, waypoints=frame.apply(lane.waypoints))
        for lid, lane in s.lane_graph.lanes.items()
    }
    moved = replace(s, agents=agents, lane_graph=LaneGraph(lanes))
    return moved, frame


def relative_displacements(track: AgentTrack | np.ndarray) -> np.ndarray:
    """Per-frame displacement vectors; cumulative sum restores the track."""
    pos = track.positions if isinstance(track, AgentTrack) else np.asarray(track, dtype=np.float64)
    if pos.shape[0] < 2:
        raise TooShort("need >= 2 positions for displacements")
    return np.diff(pos, axis=0)


# --- synthetic generation -------------------------------------------------------

_MOTIONS = ("CV", "CTRV", "CTRA")
_TOPOLOGIES = ("straight", "curve", "fork")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic scenario.

    speed/accel are the target's arc-length rates at the first observed frame;
    when None they are sampled from ranges chosen so the future stays on-lane.
    """

    n_agents: int = 3
    motion: str = "CV"
    lane_topology: str = "straight"
    noise_sigma: float = 0.0
    seed: int = 0
    speed: float | None = None
    accel: float | None = None
    obs_len: int = OBS_LEN
    pred_len: int = PRED_LEN

    def __post_init__(self):
        if self.n_agents < 1:
            raise MalformedInput("n_agents must be >= 1")
        if self.motion not in _MOTIONS:
            raise MalformedInput(f"motion must be one of {_MOTIONS}")
        if self.lane_topology not in _TOPOLOGIES:
            raise MalformedInput(f"lane_topology must be one of {_TOPOLOGIES}")


def _unit(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def _lane_points(start: np.ndarray, theta: float, length: float, spacing: float = 1.0,
                 curvature: float = 0.0) -> np.ndarray:
    """Polyline marching from *start* along heading *theta*; constant curvature."""
    n = int(round(length / spacing)) + 1
    pts = np.empty((n, 2))
    p = np.array(start, dtype=np.float64)
    h = theta
    for i in range(n):
        pts[i] = p
        p = p + spacing * _unit(h)
        h += curvature * spacing
    return pts


def _path_position(path: np.ndarray, cumlen: np.ndarray, s: float) -> np.ndarray:
    """Point at arc length s along a polyline (clamped to its extent)."""
    s = min(max(s, 0.0), float(cumlen[-1]))
    x = np.interp(s, cumlen, path[:, 0])
    y = np.interp(s, cumlen, path[:, 1])
    return np.array([x, y])


def generate_synthetic(spec: SynthSpec) -> Scenario:
    """Deterministic synthetic scenario whose noise-free target future runs
    along a lane of the generated graph; kinematic ground truth is kept in
    ``scenario.meta`` for oracle tests."""
    rng = np.random.default_rng(spec.seed)
    obs_len, pred_len = spec.obs_len, spec.pred_len
    n_frames = obs_len + pred_len

    world_origin = rng.uniform(-400.0, 400.0, size=2)
    theta = rng.uniform(0.0, 2.0 * math.pi)

    v0 = spec.speed if spec.speed is not None else float(rng.uniform(8.0, 14.0))
    if spec.motion == "CTRA":
        a = spec.accel if spec.accel is not None else float(rng.uniform(0.5, 1.5)) * (
            -1.0 if rng.random() < 0.5 else 1.0
        )
    else:
        a = 0.0

    # lane layout: target path starts 60 m behind the world origin and runs
    # far enough ahead to hold the fastest future plus slack
    back, ahead = 60.0, 110.0
    lane_start = world_origin - back * _unit(theta)
    curvature = 0.0
    if spec.lane_topology == "curve":
        radius = float(rng.uniform(60.0, 140.0)) * (-1.0 if rng.random() < 0.5 else 1.0)
        curvature = 1.0 / radius

    lanes: dict[str, Lane] = {}
    if spec.lane_topology == "fork":
        stem_len = back + 15.0  # branch point ~15 m ahead of the last observation
        stem = _lane_points(lane_start, theta, stem_len)
        left = _lane_points(stem[-1] + _unit(theta), theta, ahead - 15.0, curvature=+0.012)
        right = _lane_points(stem[-1] + _unit(theta), theta, ahead - 15.0, curvature=-0.012)
        lanes["stem"] = Lane("stem", stem, successors=("left", "right"))
        lanes["left"] = Lane("left", left, predecessors=("stem",))
        lanes["right"] = Lane("right", right, predecessors=("stem",))
        branch = "left" if rng.random() < 0.5 else "right"
        target_path = np.vstack([stem, lanes[branch].waypoints])
    else:
        main = _lane_points(lane_start, theta, back + ahead, curvature=curvature)
        lanes["main"] = Lane("main", main)
        normal = _unit(theta + math.pi / 2.0)
        for k, off in enumerate((-3.5, 3.5)):
            side = _lane_points(lane_start + off * normal, theta, back + ahead,
                                curvature=curvature)
            lanes[f"side{k}"] = Lane(f"side{k}", side)
        branch = "main"
        target_path = main

    cumlen = _kernels.cumulative_arclength(target_path)
    t = (np.arange(n_frames) - (obs_len - 1)) * DT  # 0 at the last observed frame
    t0 = t - t[0]  # time since the first observed frame
    arcs = back + v0 * t0 + 0.5 * a * t0**2
    clean = np.stack([_path_position(target_path, cumlen, s) for s in arcs])

    tracks = [AgentTrack("target", clean, is_target=True)]
    lane_names = sorted(lanes)
    for i in range(spec.n_agents - 1):
        lane = lanes[lane_names[int(rng.integers(len(lane_names)))]]
        path = lane.waypoints
        cl = _kernels.cumulative_arclength(path)
        s0 = float(rng.uniform(0.0, max(cl[-1] - 40.0, 1.0)))
        vi = float(rng.uniform(3.0, 12.0))
        pos = np.stack([_path_position(path, cl, s0 + vi * tt) for tt in t0])
        tracks.append(AgentTrack(f"agent{i}", pos))

    if spec.noise_sigma > 0.0:
        noisy = []
        for tr in tracks:
            jitter = rng.normal(0.0, spec.noise_sigma, size=tr.positions.shape)
            noisy.append(replace(tr, positions=tr.positions + jitter))
        tracks = noisy

    meta = {
        "motion": spec.motion,
        "v0": v0,
        "a": a,
        "v_last_obs": v0 + a * (obs_len - 1) * DT,
        "gt_future_arc": float(arcs[-1] - arcs[obs_len - 1]),
        "branch": branch,
        "seed": spec.seed,
    }
    return Scenario(
        scenario_id=f"synth-{spec.motion.lower()}-{spec.lane_topology}-{spec.seed}",
        agents=tuple(tracks),
        lane_graph=LaneGraph(lanes),
        meta=meta,
    )
