"""Synthetic 2-D world: agents, moving boxes, ray-blocking visibility."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .rng import stream

__all__ = [
    "GenerationError",
    "ObjectBox",
    "AgentState",
    "WorldState",
    "ScenarioConfig",
    "wrap_angle",
    "box_corners",
    "segment_hits_box",
    "generate_world",
    "step",
    "visible_objects",
    "apply_localization_noise",
    "world_to_text",
    "world_from_text",
]

class GenerationError(RuntimeError):
    pass


def wrap_angle(a: float) -> float:
    """Map an angle into [-pi, pi)."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    return -math.pi if w >= math.pi else w


@dataclass(frozen=True)
class ObjectBox:
    id: int
    center: tuple[float, float]
    length: float = 4.0
    width: float = 2.0
    yaw: float = 0.0
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"box sides must be positive, got {self.length} x {self.width}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def moved(self, dt: float) -> "ObjectBox":
        cx, cy = self.center
        vx, vy = self.velocity
        return replace(self, center=(cx + vx * dt, cy + vy * dt))


@dataclass(frozen=True)
class AgentState:
    id: int
    pose: tuple[float, float, float]
    sensor_range_m: float = 40.0
    bandwidth_hz: float = 10e6
    tx_power_dbm: float = 23.0
    is_ego: bool = False

    def __post_init__(self):
        if not self.sensor_range_m > 0:
            raise ValueError("sensor range must be positive")

    @property
    def position(self) -> tuple[float, float]:
        return self.pose[0], self.pose[1]


@dataclass(frozen=True)
class WorldState:
    time_s: float
    agents: tuple[AgentState, ...]
    objects: tuple[ObjectBox, ...]
    cycle_s: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "objects", tuple(self.objects))
        if len({a.id for a in self.agents}) != len(self.agents):
            raise ValueError("agent ids must be unique")
        if len({o.id for o in self.objects}) != len(self.objects):
            raise ValueError("object ids must be unique")
        if not self.cycle_s > 0:
            raise ValueError("cycle must be positive")

    @property
    def ego(self) -> AgentState:
        return next(a for a in self.agents if a.is_ego)

    def agent(self, agent_id: int) -> AgentState:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)


@dataclass(frozen=True)
class ScenarioConfig:
    n_agents: int = 3
    n_objects: int = 12
    bounds: tuple[float, float, float, float] = (-30.0, 30.0, -30.0, 30.0)
    speed_range: tuple[float, float] = (0.0, 10.0)
    static_fraction: float = 0.0
    box_size: tuple[float, float] = (4.0, 2.0)
    cardinal_yaw: bool = True
    sensor_range_m: float = 40.0
    cycle_s: float = 0.1
    agent_clearance_m: float = 3.0
    max_tries: int = 200

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if self.n_objects < 0:
            raise ValueError("object count must be non-negative")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"empty bounds {self.bounds}")
        if not 0 <= self.speed_range[0] <= self.speed_range[1]:
            raise ValueError(f"bad speed range {self.speed_range}")


def box_corners(box: ObjectBox) -> np.ndarray:
    """Footprint corners, counter-clockwise, as a 4 x 2 array."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = box.length / 2.0, box.width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(box.center)


def segment_hits_box(p0, p1, box: ObjectBox) -> bool:
    """Slab-clipping test of segment p0-p1 against the box footprint."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    def local(p):
        dx, dy = p[0] - box.center[0], p[1] - box.center[1]
        return c * dx + s * dy, -s * dx + c * dy
    (ax, ay), (bx, by) = local(p0), local(p1)
    t0, t1 = 0.0, 1.0
    for a, d, half in ((ax, bx - ax, box.length / 2.0), (ay, by - ay, box.width / 2.0)):
        if d == 0.0:
            if abs(a) > half:
                return False
            continue
        ta, tb = (-half - a) / d, (half - a) / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return False
    return True


def _boxes_overlap(a: ObjectBox, b: ObjectBox, margin: float = 0.5) -> bool:
    # separating axis test on the two footprints
    pa, pb = box_corners(a), box_corners(b)
    for poly in (pa, pb):
        for i in range(4):
            e = poly[(i + 1) % 4] - poly[i]
            n = np.array([-e[1], e[0]]) / np.hypot(*e)
            ra, rb = pa @ n, pb @ n
            if ra.max() + margin < rb.min() or rb.max() + margin < ra.min():
                return False
    return True


def _near_agent(box: ObjectBox, agents: Iterable[AgentState], clearance: float) -> bool:
    corners = box_corners(box)
    for a in agents:
        p = np.asarray(a.position)
        # distance from agent to footprint: inside or within clearance of an edge
        if segment_hits_box(p, p, box):
            return True
        for i in range(4):
            u, v = corners[i], corners[(i + 1) % 4]
            t = np.clip(np.dot(p - u, v - u) / np.dot(v - u, v - u), 0.0, 1.0)
            if np.hypot(*(u + t * (v - u) - p)) < clearance:
                return True
    return False


def generate_world(config: ScenarioConfig, seed: int) -> WorldState:
    """Random scene: agent 0 is the ego; agents snap to whole cells and cardinal headings."""
    xmin, xmax, ymin, ymax = config.bounds
    rng = stream(seed, "world")
    agents: list[AgentState] = []
    for i in range(config.n_agents):
        if i == 0:
            pose = (0.0, 0.0, 0.0)
        else:
            pose = (
                float(np.round(rng.uniform(xmin, xmax))),
                float(np.round(rng.uniform(ymin, ymax))),
                float(rng.integers(0, 4)) * math.pi / 2.0,
            )
        agents.append(AgentState(i, (pose[0], pose[1], wrap_angle(pose[2])), config.sensor_range_m, is_ego=(i == 0)))

    objects: list[ObjectBox] = []
    for k in range(config.n_objects):
        for _ in range(config.max_tries):
            yaw = float(rng.integers(0, 4)) * math.pi / 2.0 if config.cardinal_yaw else float(rng.uniform(-math.pi, math.pi))
            moving = rng.uniform() >= config.static_fraction
            speed = float(rng.uniform(*config.speed_range)) if moving else 0.0
            box = ObjectBox(
                id=k,
                center=(float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax))),
                length=config.box_size[0],
                width=config.box_size[1],
                yaw=yaw,
                velocity=(speed * math.cos(yaw), speed * math.sin(yaw)),
            )
            if _near_agent(box, agents, config.agent_clearance_m):
                continue
            if any(_boxes_overlap(box, o) for o in objects):
                continue
            objects.append(box)
            break
        else:
            raise GenerationError(f"could not place object {k} after {config.max_tries} tries")
    return WorldState(0.0, tuple(agents), tuple(objects), config.cycle_s, int(seed))


def step(world: WorldState, dt_s: float) -> WorldState:
    """Advance objects by constant velocity; agents stay put.  Negative ``dt`` rewinds
    are available through :func:`rewind`."""
    if dt_s < 0:
        raise ValueError(f"dt must be non-negative, got {dt_s}")
    if dt_s == 0:
        return world
    return replace(world, time_s=world.time_s + dt_s, objects=tuple(o.moved(dt_s) for o in world.objects))


def rewind(world: WorldState, dt_s: float) -> WorldState:
    """World as it was ``dt_s`` seconds ago under constant velocity."""
    if dt_s < 0:
        raise ValueError(f"rewind must be non-negative, got {dt_s}")
    if dt_s == 0:
        return world
    return replace(world, time_s=world.time_s - dt_s, objects=tuple(o.moved(-dt_s) for o in world.objects))


def visible_objects(agent: AgentState, world: WorldState) -> tuple[ObjectBox, ...]:
    """Objects within range whose center ray is not blocked by another footprint."""
    p = agent.position
    in_range = [o for o in world.objects if math.dist(p, o.center) <= agent.sensor_range_m]
    out = []
    for o in in_range:
        if not any(b.id != o.id and segment_hits_box(p, o.center, b) for b in world.objects):
            out.append(o)
    return tuple(out)


def apply_localization_noise(pose, std_pos_m: float, std_yaw_rad: float, rng: np.random.Generator):
    if std_pos_m < 0 or std_yaw_rad < 0:
        raise ValueError("noise std must be non-negative")
    # draw all three even when a std is zero so streams stay aligned across settings
    dx, dy, dyaw = rng.standard_normal(3)
    return (
        pose[0] + std_pos_m * float(dx),
        pose[1] + std_pos_m * float(dy),
        wrap_angle(pose[2] + std_yaw_rad * float(dyaw)) if std_yaw_rad > 0 else pose[2],
    )


def world_to_text(world: WorldState) -> str:
    lines = [f"world time={world.time_s!r} cycle={world.cycle_s!r} seed={world.rng_seed}"]
    for a in world.agents:
        lines.append(
            f"agent id={a.id} x={a.pose[0]!r} y={a.pose[1]!r} yaw={a.pose[2]!r} "
            f"range={a.sensor_range_m!r} bw={a.bandwidth_hz!r} ptx={a.tx_power_dbm!r} ego={int(a.is_ego)}"
        )
    for o in world.objects:
        lines.append(
            f"object id={o.id} x={o.center[0]!r} y={o.center[1]!r} l={o.length!r} w={o.width!r} "
            f"yaw={o.yaw!r} vx={o.velocity[0]!r} vy={o.velocity[1]!r}"
        )
    return "\n".join(lines) + "\n"


def world_from_text(text: str) -> WorldState:
    head = None
    agents, objects = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        kind, *fields = line.split()
        try:
            kv = {k: v for k, v in (f.split("=", 1) for f in fields)}
            if kind == "world":
                head = kv
            elif kind == "agent":
                agents.append(AgentState(
                    int(kv["id"]), (float(kv["x"]), float(kv["y"]), float(kv["yaw"])),
                    float(kv["range"]), float(kv["bw"]), float(kv["ptx"]), kv["ego"] == "1",
                ))
            elif kind == "object":
                objects.append(ObjectBox(
                    int(kv["id"]), (float(kv["x"]), float(kv["y"])), float(kv["l"]), float(kv["w"]),
                    float(kv["yaw"]), (float(kv["vx"]), float(kv["vy"])),
                ))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (KeyError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if head is None:
        raise ValueError("missing world header")
    return WorldState(float(head["time"]), tuple(agents), tuple(objects), float(head["cycle"]), int(head["seed"]))
