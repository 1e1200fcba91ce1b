"""Procedural 2D driving worlds: walls, rectangular agents and a scripted ego.

World frame is metric, x forward along the main road at spawn, y to the left.
Every world is a pure function of ``(archetype, seed)``; :func:`step` is pure
as well, so replays are bit-identical.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np

from src.common import stream_rng
from src.errors import ContractError

logger = logging.getLogger(__name__)

FRAME_DT = 0.1
PATH_FRAMES = 120

ROAD_HALF_WIDTH = 4.0
WALL_OFFSET = 7.0
LANE_Y = 2.0
FAR = 300.0
CAR_HALF = (2.2, 0.9)
PED_HALF = (0.3, 0.3)
BOX_HALF = (1.0, 0.8)

FORK_ANGLE = math.pi / 6
GATE_AHEAD = 3.0


class Archetype(StrEnum):
    STRAIGHT_ROAD = "straight_road"
    INTERSECTION = "intersection"
    FORK = "fork"


ARCHETYPES: tuple[Archetype, ...] = tuple(Archetype)


class Intent(StrEnum):
    CONSTANT = "constant_velocity"
    BRANCH_LEFT = "branch_left"
    BRANCH_RIGHT = "branch_right"


@dataclass(frozen=True)
class OrientedRect:
    cx: float
    cy: float
    heading: float
    half_length: float
    half_width: float

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        dx, dy = px - self.cx, py - self.cy
        along = dx * c + dy * s
        across = -dx * s + dy * c
        return (np.abs(along) <= self.half_length) & (np.abs(across) <= self.half_width)

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        local = np.array(
            [
                [self.half_length, self.half_width],
                [-self.half_length, self.half_width],
                [-self.half_length, -self.half_width],
                [self.half_length, -self.half_width],
            ]
        )
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def edges(self) -> np.ndarray:
        pts = self.corners()
        return np.concatenate([pts, np.roll(pts, -1, axis=0)], axis=1)


@dataclass(frozen=True)
class RoadLayout:
    drivable: tuple[OrientedRect, ...]
    stop_lines: tuple[OrientedRect, ...] = ()
    crossings: tuple[OrientedRect, ...] = ()


@dataclass(frozen=True)
class Agent:
    half_extents: tuple[float, float]
    pose: tuple[float, float, float]
    velocity: tuple[float, float]
    intent: Intent = Intent.CONSTANT
    gate_x: float = math.inf
    branch_heading: float = 0.0
    turned: bool = False

    def footprint(self) -> OrientedRect:
        x, y, h = self.pose
        return OrientedRect(x, y, h, self.half_extents[0], self.half_extents[1])


@dataclass(frozen=True, eq=False)
class Ego:
    pose: tuple[float, float, float]
    velocity: tuple[float, float]
    planned_path: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class SceneState:
    archetype: Archetype
    seed: int
    static_segments: np.ndarray = field(repr=False)
    agents: tuple[Agent, ...]
    ego: Ego
    layout: RoadLayout
    time: float = 0.0

    @property
    def frame(self) -> int:
        return int(round(self.time / FRAME_DT))

    def fork_intents(self) -> list[Intent]:
        return [a.intent for a in self.agents if a.intent is not Intent.CONSTANT]


# ---------------------------------------------------------------------------
# geometry helpers


def _segments_cross(a: np.ndarray, b: np.ndarray) -> bool:
    """True when any segment in ``a`` (N, 4) properly intersects any in ``b`` (M, 4)."""
    if len(a) == 0 or len(b) == 0:
        return False
    p, r = a[:, None, :2], a[:, None, 2:] - a[:, None, :2]
    q, s = b[None, :, :2], b[None, :, 2:] - b[None, :, :2]
    denom = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    qp = q - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / denom
        u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / denom
    hit = (denom != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    return bool(np.any(hit))


def overlaps_static(rect: OrientedRect, segments: np.ndarray) -> bool:
    if _segments_cross(rect.edges(), segments):
        return True
    inside = rect.contains(segments[:, 0], segments[:, 1]) | rect.contains(segments[:, 2], segments[:, 3])
    return bool(np.any(inside))


def _rect_gap_ok(candidate: OrientedRect, placed: list[OrientedRect], margin: float) -> bool:
    for other in placed:
        reach = candidate.half_length + other.half_length + margin
        if math.hypot(candidate.cx - other.cx, candidate.cy - other.cy) < reach:
            return False
    return True


def _wall(x0: float, y0: float, x1: float, y1: float) -> list[float]:
    return [x0, y0, x1, y1]


def time_parameterize(points: np.ndarray, speed: float, n_frames: int = PATH_FRAMES) -> np.ndarray:
    """Positions at ``k * FRAME_DT`` travelling ``points`` at constant ``speed``."""
    seg = np.diff(points, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    arc = np.concatenate([[0.0], np.cumsum(lengths)])
    s = speed * FRAME_DT * np.arange(n_frames)
    if s[-1] > arc[-1]:
        raise ContractError(f"planned polyline ({arc[-1]:.1f} m) shorter than {s[-1]:.1f} m of travel")
    return np.stack([np.interp(s, arc, points[:, 0]), np.interp(s, arc, points[:, 1])], axis=1)


# ---------------------------------------------------------------------------
# archetypes


def _cars_on_road(
    rng: np.random.Generator,
    segments: np.ndarray,
    placed: list[OrientedRect],
    count: int,
    x_range: tuple[float, float],
    ego_speed: float,
) -> list[Agent]:
    # Same-lane traffic never closes in on the ego: faster ahead, slower behind.
    agents: list[Agent] = []
    for _ in range(count):
        for _attempt in range(20):
            oncoming = bool(rng.random() < 0.5)
            x0 = float(rng.uniform(*x_range))
            if not oncoming and abs(x0) < 8.0:
                continue
            lane = LANE_Y if oncoming else -LANE_Y
            if oncoming:
                speed = float(rng.uniform(4.0, 9.0))
            elif x0 > 0:
                speed = ego_speed + float(rng.uniform(0.0, 3.0))
            else:
                speed = max(ego_speed - float(rng.uniform(0.0, 2.0)), 0.5)
            heading = math.pi if oncoming else 0.0
            agent = Agent(CAR_HALF, (x0, lane, heading), (-speed if oncoming else speed, 0.0))
            rect = agent.footprint()
            if _rect_gap_ok(rect, placed, 1.5) and not overlaps_static(rect, segments):
                placed.append(rect)
                agents.append(agent)
                break
    return agents


def _parked_boxes(rng: np.random.Generator, count: int, x_range: tuple[float, float]) -> list[list[float]]:
    segments: list[list[float]] = []
    for _ in range(count):
        side = 1.0 if rng.random() < 0.5 else -1.0
        rect = OrientedRect(float(rng.uniform(*x_range)), side * 5.5, 0.0, *BOX_HALF)
        segments.extend(rect.edges().tolist())
    return segments


def _build_straight_road(rng: np.random.Generator) -> tuple[np.ndarray, tuple[Agent, ...], np.ndarray, RoadLayout]:
    walls = [_wall(-FAR, WALL_OFFSET, FAR, WALL_OFFSET), _wall(-FAR, -WALL_OFFSET, FAR, -WALL_OFFSET)]
    walls.extend(_parked_boxes(rng, int(rng.integers(0, 4)), (-15.0, 50.0)))
    segments = np.asarray(walls, dtype=np.float64)

    stop_lines: tuple[OrientedRect, ...] = ()
    crossings: tuple[OrientedRect, ...] = ()
    if rng.random() < 0.5:
        xc = float(rng.uniform(10.0, 30.0))
        crossings = (OrientedRect(xc, 0.0, 0.0, 1.5, ROAD_HALF_WIDTH),)
        stop_lines = (OrientedRect(xc - 3.0, -LANE_Y, 0.0, 0.25, LANE_Y),)
    layout = RoadLayout((OrientedRect(0.0, 0.0, 0.0, FAR, ROAD_HALF_WIDTH),), stop_lines, crossings)

    speed = float(rng.uniform(4.0, 7.0))
    ego_rect = OrientedRect(0.0, -LANE_Y, 0.0, CAR_HALF[0], CAR_HALF[1])
    agents = _cars_on_road(rng, segments, [ego_rect], int(rng.integers(2, 5)), (-20.0, 45.0), speed)
    path = time_parameterize(np.array([[0.0, -LANE_Y], [FAR, -LANE_Y]]), speed)
    return segments, tuple(agents), path, layout


def _build_intersection(rng: np.random.Generator) -> tuple[np.ndarray, tuple[Agent, ...], np.ndarray, RoadLayout]:
    xc = float(rng.uniform(12.0, 18.0))
    w = WALL_OFFSET
    walls = [
        _wall(-FAR, w, xc - w, w),
        _wall(xc + w, w, FAR, w),
        _wall(-FAR, -w, xc - w, -w),
        _wall(xc + w, -w, FAR, -w),
        _wall(xc - w, w, xc - w, FAR),
        _wall(xc + w, w, xc + w, FAR),
        _wall(xc - w, -w, xc - w, -FAR),
        _wall(xc + w, -w, xc + w, -FAR),
    ]
    segments = np.asarray(walls, dtype=np.float64)

    half_pi = math.pi / 2
    layout = RoadLayout(
        drivable=(
            OrientedRect(0.0, 0.0, 0.0, FAR, ROAD_HALF_WIDTH),
            OrientedRect(xc, 0.0, half_pi, FAR, ROAD_HALF_WIDTH),
        ),
        stop_lines=(
            OrientedRect(xc - 8.0, -LANE_Y, 0.0, 0.25, LANE_Y),
            OrientedRect(xc + 8.0, LANE_Y, 0.0, 0.25, LANE_Y),
            OrientedRect(xc + LANE_Y, -8.0, half_pi, 0.25, LANE_Y),
            OrientedRect(xc - LANE_Y, 8.0, half_pi, 0.25, LANE_Y),
        ),
        crossings=(
            OrientedRect(xc - 6.0, 0.0, 0.0, 0.75, ROAD_HALF_WIDTH),
            OrientedRect(xc + 6.0, 0.0, 0.0, 0.75, ROAD_HALF_WIDTH),
            OrientedRect(xc, -6.0, half_pi, 0.75, ROAD_HALF_WIDTH),
            OrientedRect(xc, 6.0, half_pi, 0.75, ROAD_HALF_WIDTH),
        ),
    )

    placed = [OrientedRect(0.0, -LANE_Y, 0.0, CAR_HALF[0], CAR_HALF[1])]
    agents: list[Agent] = []
    for _ in range(int(rng.integers(1, 3))):
        northbound = bool(rng.random() < 0.5)
        lane_x = xc + LANE_Y if northbound else xc - LANE_Y
        y0 = float(rng.uniform(-25.0, -9.0) if northbound else rng.uniform(9.0, 25.0))
        speed = float(rng.uniform(3.0, 7.0))
        heading = half_pi if northbound else -half_pi
        agent = Agent(CAR_HALF, (lane_x, y0, heading), (0.0, speed if northbound else -speed))
        rect = agent.footprint()
        if _rect_gap_ok(rect, placed, 1.5):
            placed.append(rect)
            agents.append(agent)
    for _ in range(int(rng.integers(0, 3))):
        side = 1.0 if rng.random() < 0.5 else -1.0
        xw = xc + side * 6.0
        y0 = float(rng.uniform(-5.0, 5.0))
        vy = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.8, 1.6))
        agent = Agent(PED_HALF, (xw, y0, math.copysign(half_pi, vy)), (0.0, vy))
        rect = agent.footprint()
        if _rect_gap_ok(rect, placed, 0.5):
            placed.append(rect)
            agents.append(agent)
    speed = float(rng.uniform(4.0, 7.0))
    agents.extend(_cars_on_road(rng, segments, placed, int(rng.integers(0, 2)), (xc + 10.0, xc + 40.0), speed))
    path = time_parameterize(np.array([[0.0, -LANE_Y], [FAR, -LANE_Y]]), speed)
    return segments, tuple(agents), path, layout


def fork_branches(fork_x: float) -> tuple[OrientedRect, OrientedRect]:
    """(left, right) branch corridors leaving the trunk at ``fork_x``."""
    half = FAR / 2
    c, s = math.cos(FORK_ANGLE), math.sin(FORK_ANGLE)
    left = OrientedRect(fork_x + half * c, half * s, FORK_ANGLE, half, ROAD_HALF_WIDTH)
    right = OrientedRect(fork_x + half * c, -half * s, -FORK_ANGLE, half, ROAD_HALF_WIDTH)
    return left, right


def _build_fork(rng: np.random.Generator) -> tuple[np.ndarray, tuple[Agent, ...], np.ndarray, RoadLayout]:
    fork_x = float(rng.uniform(14.0, 18.0))
    c, s = math.cos(FORK_ANGLE), math.sin(FORK_ANGLE)
    w = WALL_OFFSET
    gore_x = fork_x + ROAD_HALF_WIDTH / s + 3.0
    walls = [
        _wall(-FAR, w, fork_x, w),
        _wall(-FAR, -w, fork_x, -w),
        _wall(fork_x, w, fork_x + FAR * c, w + FAR * s),
        _wall(fork_x, -w, fork_x + FAR * c, -w - FAR * s),
        _wall(gore_x, 0.0, gore_x + FAR * c, FAR * s),
        _wall(gore_x, 0.0, gore_x + FAR * c, -FAR * s),
    ]
    segments = np.asarray(walls, dtype=np.float64)
    left, right = fork_branches(fork_x)
    trunk = OrientedRect(fork_x - FAR / 2, 0.0, 0.0, FAR / 2, ROAD_HALF_WIDTH)
    layout = RoadLayout(drivable=(trunk, left, right))

    go_left = bool(rng.random() < 0.5)
    speed = float(rng.uniform(4.0, 6.0))
    agent = Agent(
        CAR_HALF,
        (fork_x - GATE_AHEAD, 0.0, 0.0),
        (speed, 0.0),
        intent=Intent.BRANCH_LEFT if go_left else Intent.BRANCH_RIGHT,
        gate_x=fork_x,
        branch_heading=FORK_ANGLE if go_left else -FORK_ANGLE,
    )

    ego_left = bool(rng.random() < 0.5)
    sign = 1.0 if ego_left else -1.0
    ego_speed = float(rng.uniform(3.0, 4.0))
    points = np.array([[0.0, 0.0], [fork_x, 0.0], [fork_x + FAR * c, sign * FAR * s]])
    path = time_parameterize(points, ego_speed)
    return segments, (agent,), path, layout


_BUILDERS = {
    Archetype.STRAIGHT_ROAD: _build_straight_road,
    Archetype.INTERSECTION: _build_intersection,
    Archetype.FORK: _build_fork,
}


def _ego_at(path: np.ndarray, t: float) -> Ego:
    s = t / FRAME_DT
    # Summed time steps drift; a frame boundary must pick the segment ahead.
    if abs(s - round(s)) < 1e-9:
        s = float(round(s))
    k = min(int(math.floor(s)), len(path) - 2)
    frac = s - k
    a, b = path[k], path[k + 1]
    pos = a + frac * (b - a)
    heading = math.atan2(b[1] - a[1], b[0] - a[0])
    vel = (b - a) / FRAME_DT
    return Ego((float(pos[0]), float(pos[1]), heading), (float(vel[0]), float(vel[1])), path)


def build_world(archetype: Archetype | str, seed: int) -> SceneState:
    try:
        kind = Archetype(archetype)
    except ValueError as exc:
        raise ContractError(f"bad archetype '{archetype}' (expected one of {[a.value for a in ARCHETYPES]})") from exc
    rng = stream_rng(seed, ARCHETYPES.index(kind))
    segments, agents, path, layout = _BUILDERS[kind](rng)
    return SceneState(kind, seed, segments, agents, _ego_at(path, 0.0), layout, 0.0)


def with_flipped_intents(state: SceneState) -> SceneState:
    """Same world with every fork agent committed to the other branch."""
    flipped = []
    for a in state.agents:
        if a.intent is Intent.BRANCH_LEFT:
            a = replace(a, intent=Intent.BRANCH_RIGHT, branch_heading=-a.branch_heading)
        elif a.intent is Intent.BRANCH_RIGHT:
            a = replace(a, intent=Intent.BRANCH_LEFT, branch_heading=-a.branch_heading)
        flipped.append(a)
    return replace(state, agents=tuple(flipped))


def _advance(agent: Agent, dt: float) -> Agent:
    x, y, h = agent.pose
    vx, vy = agent.velocity
    branching = agent.intent is not Intent.CONSTANT and not agent.turned
    if branching and vx > 0 and x + vx * dt >= agent.gate_x:
        t_gate = max(agent.gate_x - x, 0.0) / vx
        rest = dt - t_gate
        speed = math.hypot(vx, vy)
        nh = agent.branch_heading
        nvx, nvy = speed * math.cos(nh), speed * math.sin(nh)
        pose = (agent.gate_x + nvx * rest, y + vy * t_gate + nvy * rest, nh)
        return replace(agent, pose=pose, velocity=(nvx, nvy), turned=True)
    return replace(agent, pose=(x + vx * dt, y + vy * dt, h))


def step(state: SceneState, dt: float = FRAME_DT) -> SceneState:
    if dt <= 0:
        raise ContractError(f"step needs dt > 0, got {dt}")
    t = state.time + dt
    agents = tuple(_advance(a, dt) for a in state.agents)
    return replace(state, agents=agents, ego=_ego_at(state.ego.planned_path, t), time=t)


def planned_trajectory(state: SceneState, n_frames: int) -> np.ndarray:
    """(n_frames, 3) planned positions from the current frame, in the current ego frame."""
    path = state.ego.planned_path
    start = state.frame
    idx = np.arange(start, start + n_frames)
    if idx[-1] >= len(path):
        raise ContractError(f"planned path has {len(path)} frames, need {idx[-1] + 1}")
    x0, y0, h = state.ego.pose
    rel = path[idx] - np.array([x0, y0])
    c, s = math.cos(h), math.sin(h)
    local = rel @ np.array([[c, -s], [s, c]])
    out = np.zeros((n_frames, 3))
    out[:, :2] = local
    out[0, :2] = 0.0
    return out
