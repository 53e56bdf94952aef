"""Named scene-set generators used by the experiments.

Every generator is a pure function of ``(seed, options)`` and returns a
:class:`Scene`: the world, the grid geometry the ego should use, and any
latency that a protocol pins for particular collaborators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..encoder import GridGeometry
from ..rng import stream
from ..scenario import (
    AgentState,
    GenerationError,
    ObjectBox,
    ScenarioConfig,
    WorldState,
    generate_world,
    visible_objects,
)

__all__ = [
    "Scene",
    "SceneOptions",
    "SCENE_SETS",
    "dense_traffic",
    "sparse_highway",
    "occlusion",
    "latency_probe",
    "make_scene",
]

DENSE_GRID = GridGeometry(16, 128, 128, 0.5)
HIGHWAY_GRID = GridGeometry(16, 48, 256, 0.5)
HIGHWAY_LANES = (-7.5, -3.5, 3.5, 7.5)
CARDINAL = (0.0, math.pi / 2.0, math.pi, -math.pi / 2.0)


@dataclass(frozen=True)
class Scene:
    world: WorldState
    geometry: GridGeometry
    forced_latency: dict = field(default_factory=dict)
    designated: int | None = None


@dataclass(frozen=True)
class SceneOptions:
    """Knobs shared by the scene sets; not every set reads every field."""

    n_agents: int = 3
    n_objects: int = 14
    speed: tuple[float, float] = (0.0, 10.0)
    sensor_range_m: float = 40.0
    stale_neighbor_s: float | None = None  # add a badly delayed neighbor near the ego
    probe_latency_s: float = 0.0
    occlusion_latency_max_s: float = 0.1
    grid: GridGeometry | None = None


def _with_stale_neighbor(world: WorldState, forced: dict, tau: float, seed: int) -> tuple[WorldState, dict]:
    rng = stream(seed, "stale-neighbor")
    taken = [o.center for o in world.objects] + [a.position for a in world.agents]
    for _ in range(200):
        ang = float(rng.uniform(-math.pi, math.pi))
        r = float(rng.uniform(4.0, 8.0))
        pos = (float(round(r * math.cos(ang))), float(round(r * math.sin(ang))))
        if all(math.dist(pos, p) > 4.0 for p in taken):
            break
    else:
        raise GenerationError("no free spot for the stale neighbor")
    new_id = max(a.id for a in world.agents) + 1
    agent = AgentState(new_id, (pos[0], pos[1], 0.0), world.ego.sensor_range_m)
    out = dict(forced)
    out[new_id] = float(tau)
    return WorldState(world.time_s, world.agents + (agent,), world.objects, world.cycle_s, world.rng_seed), out


def dense_traffic(seed: int, opts: SceneOptions = SceneOptions()) -> Scene:
    """Urban block: agents and boxes scattered over a 60 m square around the ego."""
    cfg = ScenarioConfig(
        n_agents=opts.n_agents,
        n_objects=opts.n_objects,
        bounds=(-30.0, 30.0, -30.0, 30.0),
        speed_range=opts.speed,
        sensor_range_m=opts.sensor_range_m,
    )
    world = generate_world(cfg, seed)
    forced: dict = {}
    if opts.stale_neighbor_s is not None:
        world, forced = _with_stale_neighbor(world, forced, opts.stale_neighbor_s, seed)
    return Scene(world, opts.grid or DENSE_GRID, forced)


def sparse_highway(seed: int, opts: SceneOptions = SceneOptions()) -> Scene:
    """Four straight lanes along x; roadside units sit on the shoulders."""
    rng = stream(seed, "highway")
    geo = opts.grid or HIGHWAY_GRID
    half_x = geo.width * geo.cell_size / 2.0 - 2.0
    agents = [AgentState(0, (0.0, 0.0, 0.0), opts.sensor_range_m, is_ego=True)]
    for i in range(1, opts.n_agents):
        x = float(round(rng.uniform(-half_x, half_x)))
        y = 11.0 if rng.uniform() < 0.5 else -11.0
        agents.append(AgentState(i, (x, y, 0.0), opts.sensor_range_m))
    objects: list[ObjectBox] = []
    lo, hi = opts.speed
    for k in range(opts.n_objects):
        for _ in range(200):
            lane = HIGHWAY_LANES[int(rng.integers(0, len(HIGHWAY_LANES)))]
            heading = 0.0 if lane > 0 else math.pi
            speed = float(rng.uniform(lo, hi))
            box = ObjectBox(k, (float(rng.uniform(-half_x, half_x)), lane), yaw=heading,
                            velocity=(speed * math.cos(heading), 0.0))
            if all(abs(box.center[0] - o.center[0]) > 6.0 or box.center[1] != o.center[1] for o in objects):
                objects.append(box)
                break
        else:
            raise GenerationError(f"could not place highway object {k}")
    world = WorldState(0.0, tuple(agents), tuple(objects), 0.1, int(seed))
    forced: dict = {}
    if opts.stale_neighbor_s is not None:
        world, forced = _with_stale_neighbor(world, forced, opts.stale_neighbor_s, seed)
    return Scene(world, geo, forced)


def occlusion(seed: int, opts: SceneOptions = SceneOptions()) -> Scene:
    """Ego, a blocker on the ego's line of sight, and the hidden target behind it.

    The collaborator stands off to the side with a clear view of the target
    and a latency drawn uniformly in ``[0, occlusion_latency_max_s]``.
    """
    rng = stream(seed, "occlusion")
    for _ in range(200):
        th = float(rng.uniform(-math.pi, math.pi))
        u = np.array([math.cos(th), math.sin(th)])
        n = np.array([-u[1], u[0]])
        target = u * float(rng.uniform(14.0, 22.0))
        blocker = u * float(rng.uniform(6.0, 9.0))
        # put the blocker's long side across the sight line
        yaw_b = 0.0 if abs(u[1]) > abs(u[0]) else math.pi / 2.0
        yaw_t = CARDINAL[int(rng.integers(0, 4))]
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        cpos = np.round(target + side * n * float(rng.uniform(10.0, 16.0)))
        objects = (
            ObjectBox(0, (float(blocker[0]), float(blocker[1])), yaw=yaw_b),
            ObjectBox(1, (float(target[0]), float(target[1])), yaw=yaw_t),
        )
        agents = (
            AgentState(0, (0.0, 0.0, 0.0), opts.sensor_range_m, is_ego=True),
            AgentState(1, (float(cpos[0]), float(cpos[1]), CARDINAL[int(rng.integers(0, 4))]), opts.sensor_range_m),
        )
        world = WorldState(0.0, agents, objects, 0.1, int(seed))
        ego_sees = {o.id for o in visible_objects(agents[0], world)}
        col_sees = {o.id for o in visible_objects(agents[1], world)}
        if ego_sees == {0} and 1 in col_sees:
            tau = float(rng.uniform(0.0, opts.occlusion_latency_max_s))
            return Scene(world, opts.grid or DENSE_GRID, {1: tau}, designated=1)
    raise GenerationError(f"no occlusion layout for seed {seed}")


def latency_probe(seed: int, opts: SceneOptions = SceneOptions()) -> Scene:
    """Ego plus one nearby collaborator whose latency the protocol pins.

    All boxes move at exactly ``opts.speed[1]`` so the staleness displacement
    is a single known number.
    """
    speed = opts.speed[1]
    cfg = ScenarioConfig(
        n_agents=1,
        n_objects=opts.n_objects,
        bounds=(-30.0, 30.0, -30.0, 30.0),
        speed_range=(speed, speed),
        sensor_range_m=opts.sensor_range_m,
    )
    base = generate_world(cfg, seed)
    rng = stream(seed, "probe")
    taken = [o.center for o in base.objects]
    for _ in range(200):
        ang = float(rng.uniform(-math.pi, math.pi))
        r = float(rng.uniform(6.0, 12.0))
        pos = (float(round(r * math.cos(ang))), float(round(r * math.sin(ang))))
        if all(math.dist(pos, p) > 4.0 for p in taken):
            break
    else:
        raise GenerationError("no free spot for the probe collaborator")
    agent = AgentState(1, (pos[0], pos[1], CARDINAL[int(rng.integers(0, 4))]), opts.sensor_range_m)
    world = WorldState(0.0, base.agents + (agent,), base.objects, base.cycle_s, base.rng_seed)
    return Scene(world, opts.grid or DENSE_GRID, {1: float(opts.probe_latency_s)}, designated=1)


SCENE_SETS = {
    "dense-traffic": dense_traffic,
    "sparse-highway": sparse_highway,
    "occlusion": occlusion,
    "latency-probe": latency_probe,
}


def make_scene(name: str, seed: int, opts: SceneOptions = SceneOptions()) -> Scene:
    try:
        gen = SCENE_SETS[name]
    except KeyError:
        raise KeyError(f"unknown scene set {name!r}; choose from {sorted(SCENE_SETS)}") from None
    return gen(seed, opts)
