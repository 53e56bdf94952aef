"""One collaborative perception pass for one ego agent."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from ..channel import LatencyBreakdown, LinkDefaults, draw_latency
from ..detect import Detection, decode, in_grid_extent, to_world
from ..encoder import GridGeometry, capture_stale, encode, encode_history, warp_to_ego
from ..fmcore import FeatureGrid
from ..hpha import DEFAULT_SCALES, Collaborator, fuse, naive_mean_fusion
from ..params import ParamSet
from ..rng import stream
from ..scenario import WorldState
from ..selection import build_nodes, extract_sparse_map, gnn_enhanced_weights, select_collaborators

__all__ = ["PipelineSettings", "EgoOutcome", "PrunedAccessError", "perceive", "ground_truth"]


class PrunedAccessError(AssertionError):
    """A pruned collaborator's grid reached the fusion sum."""


@dataclass(frozen=True)
class PipelineSettings:
    geometry: GridGeometry = GridGeometry()
    link: LinkDefaults = LinkDefaults()
    history_frames: int = 2
    scales: tuple = DEFAULT_SCALES
    sparse_threshold: float = 0.5
    decode_threshold: float = 0.35
    comm_range_m: float = 120.0
    hpha_on: bool = True
    selection_on: bool = True
    noise_std: tuple[float, float] = (0.0, 0.0)
    gnn_params: ParamSet | None = field(default=None, compare=False)
    sta_params: ParamSet | None = field(default=None, compare=False)


@dataclass
class EgoOutcome:
    ego_id: int
    detections: list[Detection]
    latencies: dict[int, LatencyBreakdown]
    weights: dict[int, float]
    selected: set[int]
    source_ids: tuple[int, ...]
    fused: FeatureGrid

    @property
    def mean_latency_s(self) -> float:
        used = [self.latencies[j].total_s for j in sorted(self.selected)]
        return sum(used) / len(used) if used else 0.0


def ground_truth(world: WorldState, ego_id: int, geometry: GridGeometry):
    """Objects whose center lies inside the ego's grid extent."""
    ego = world.agent(ego_id)
    return [o for o in world.objects
            if in_grid_extent(ego, o.center, geometry.height, geometry.width, geometry.cell_size)]


def perceive(world: WorldState, ego_id: int, settings: PipelineSettings, seed: int,
             forced_latency: Mapping[int, float] | None = None) -> EgoOutcome:
    forced_latency = forced_latency or {}
    geo = settings.geometry
    ego = world.agent(ego_id)
    neighbors = [a for a in world.agents
                 if a.id != ego_id and math.dist(a.position, ego.position) <= settings.comm_range_m]

    latencies: dict[int, LatencyBreakdown] = {}
    warped: dict[int, FeatureGrid] = {}
    ego_grid = encode(ego, world, geo)
    for nb in sorted(neighbors, key=lambda a: a.id):
        link_rng = stream(seed, "link", world.time_s, ego_id, nb.id)
        lat, _ = draw_latency(link_rng, math.dist(nb.position, ego.position), geo.shape, settings.link)
        if nb.id in forced_latency:
            lat = LatencyBreakdown.forced(forced_latency[nb.id])
        latencies[nb.id] = lat
        packet = capture_stale(world, nb, lat, geo)
        warped[nb.id] = warp_to_ego(packet, ego.pose, ego_grid, settings.noise_std,
                                    stream(seed, "localization", world.time_s, ego_id, nb.id))

    maps = {j: extract_sparse_map(g, settings.sparse_threshold) for j, g in warped.items()}
    if settings.selection_on:
        ego_map = extract_sparse_map(ego_grid, settings.sparse_threshold)
        nodes = build_nodes(ego_id, ego_map, maps, {j: lat.total_s for j, lat in latencies.items()})
        weights = gnn_enhanced_weights(nodes, settings.gnn_params)
        selected = select_collaborators(weights)
    else:
        weights = {j: 1.0 for j in warped}
        selected = set(warped)

    if settings.hpha_on:
        history = encode_history(ego, world, settings.history_frames, geo)
        collabs = [Collaborator(j, warped[j], maps[j], weights[j]) for j in sorted(selected)]
        result = fuse(ego_id, ego_grid, collabs, history, settings.sta_params, settings.scales)
        fused, source_ids = result.grid, result.source_ids
    else:
        fused = naive_mean_fusion(ego_grid, [warped[j] for j in sorted(selected)])
        source_ids = tuple(sorted(selected | {ego_id}))
    leaked = set(source_ids) - selected - {ego_id}
    if leaked:
        raise PrunedAccessError(f"pruned agents {sorted(leaked)} entered fusion for ego {ego_id}")

    dets = to_world(decode(fused, settings.decode_threshold, geo.channels), ego.pose)
    return EgoOutcome(ego_id, dets, latencies, weights, selected, source_ids, fused)
