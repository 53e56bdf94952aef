"""Deterministic bird's-eye-view rasterizer and ego-frame warping.

This stands in for a learned point-cloud backbone.  Channel layout:

* 0 -- occupancy, 1 inside a visible object's footprint;
* 1, 2 -- world-frame object velocity ``(vx, vy)`` painted over the footprint;
* 3.. -- low-amplitude seeded texture so attention keys are never all zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import LatencyBreakdown
from .fmcore import FeatureGrid, ShapeError
from .rng import stream
from .scenario import AgentState, WorldState, apply_localization_noise, rewind, visible_objects

__all__ = [
    "ConfigError",
    "GridGeometry",
    "SharePacket",
    "rasterize",
    "encode",
    "encode_history",
    "capture_stale",
    "warp_to_ego",
]

TEXTURE_STD = 0.01


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridGeometry:
    channels: int = 16
    height: int = 64
    width: int = 64
    cell_size: float = 1.0

    def __post_init__(self):
        if self.channels < 3:
            raise ConfigError(f"encoder needs at least 3 channels, got {self.channels}")
        if self.height < 1 or self.width < 1 or not self.cell_size > 0:
            raise ConfigError("grid dimensions and cell size must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.channels, self.height, self.width

    def origin(self) -> tuple[float, float]:
        return -(self.width - 1) / 2.0 * self.cell_size, -(self.height - 1) / 2.0 * self.cell_size


@dataclass(frozen=True)
class SharePacket:
    sender_id: int
    grid: FeatureGrid
    sender_pose: tuple[float, float, float]
    latency: LatencyBreakdown
    capture_time_s: float


def _to_body(pose, points: np.ndarray) -> np.ndarray:
    c, s = math.cos(pose[2]), math.sin(pose[2])
    d = points - np.array(pose[:2])
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def _to_world(pose, points: np.ndarray) -> np.ndarray:
    c, s = math.cos(pose[2]), math.sin(pose[2])
    x, y = points[..., 0], points[..., 1]
    return np.stack([c * x - s * y + pose[0], s * x + c * y + pose[1]], axis=-1)


def rasterize(pose, objects, geometry: GridGeometry) -> np.ndarray:
    """Occupancy and velocity planes (3 x H x W) for ``objects`` seen from ``pose``."""
    out = np.zeros((3, geometry.height, geometry.width))
    ox, oy = geometry.origin()
    xs = ox + np.arange(geometry.width) * geometry.cell_size
    ys = oy + np.arange(geometry.height) * geometry.cell_size
    centers = _to_world(pose, np.stack(np.meshgrid(xs, ys), axis=-1))
    for obj in objects:
        c, s = math.cos(obj.yaw), math.sin(obj.yaw)
        dx = centers[..., 0] - obj.center[0]
        dy = centers[..., 1] - obj.center[1]
        u = c * dx + s * dy
        v = -s * dx + c * dy
        hl, hw = obj.length / 2.0, obj.width / 2.0
        inside = (u >= -hl) & (u < hl) & (v >= -hw) & (v < hw)
        out[0][inside] = 1.0
        out[1][inside] = obj.velocity[0]
        out[2][inside] = obj.velocity[1]
    return out


def encode(agent: AgentState, world: WorldState, geometry: GridGeometry = GridGeometry()) -> FeatureGrid:
    data = np.empty(geometry.shape)
    data[:3] = rasterize(agent.pose, visible_objects(agent, world), geometry)
    # texture is a fixed per-sensor signature, so a static scene encodes identically at any time
    rng = stream(world.rng_seed, "texture", agent.id)
    data[3:] = TEXTURE_STD * rng.standard_normal((geometry.channels - 3, geometry.height, geometry.width))
    return FeatureGrid(data, geometry.cell_size, geometry.origin())


def encode_history(agent: AgentState, world: WorldState, frames: int, geometry: GridGeometry = GridGeometry()):
    """Ego frames at ``t - kT`` for ``k = 1..frames``, newest first."""
    return [encode(agent, rewind(world, k * world.cycle_s), geometry) for k in range(1, frames + 1)]


def capture_stale(
    world: WorldState, agent: AgentState, latency: LatencyBreakdown, geometry: GridGeometry = GridGeometry()
) -> SharePacket:
    tau = latency.total_s
    if tau < 0:
        raise ValueError("latency must be non-negative")
    past = rewind(world, tau)
    return SharePacket(agent.id, encode(agent, past, geometry), agent.pose, latency, past.time_s)


def warp_to_ego(
    packet: SharePacket,
    ego_pose,
    ego_grid_like: FeatureGrid | None = None,
    noise_std: tuple[float, float] = (0.0, 0.0),
    rng: np.random.Generator | None = None,
) -> FeatureGrid:
    """Resample the sender grid into the ego body frame (nearest neighbor, zero fill).

    ``noise_std`` = (position m, yaw rad) perturbs the sender pose before the
    transform, which is where localization error enters the pipeline.
    """
    src = packet.grid
    target = ego_grid_like or src
    if target.cell_size != src.cell_size:
        raise ShapeError(f"cell sizes differ: {src.cell_size} vs {target.cell_size}")
    sender_pose = packet.sender_pose
    if noise_std[0] > 0 or noise_std[1] > 0:
        if rng is None:
            raise ValueError("localization noise needs an rng")
        sender_pose = apply_localization_noise(sender_pose, noise_std[0], noise_std[1], rng)
    if tuple(sender_pose) == tuple(ego_pose) and target.same_geometry(src):
        return src

    xs, ys = target.cell_centers()
    world_pts = _to_world(ego_pose, np.stack(np.meshgrid(xs, ys), axis=-1))
    local = _to_body(sender_pose, world_pts)
    col = np.rint((local[..., 0] - src.origin[0]) / src.cell_size).astype(np.int64)
    row = np.rint((local[..., 1] - src.origin[1]) / src.cell_size).astype(np.int64)
    valid = (col >= 0) & (col < src.width) & (row >= 0) & (row < src.height)
    out = np.zeros((src.channels, target.height, target.width), np.float32)
    out[:, valid] = src.data[:, row[valid], col[valid]]
    return FeatureGrid(out, target.cell_size, target.origin)
