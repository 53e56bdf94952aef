"""Collaborator selection: sparse maps, a star-graph message-passing scorer, pruning.

Each neighbor becomes a node with state ``[occupied_fraction, latency, overlap]``
(latency normalized by ``T_MAX`` and clipped to 1).  Two rounds of message
passing update the neighbors from ``(own, ego)`` and the ego from
``(own, mean of neighbors)``; an affine readout gives each neighbor a signed
enhanced weight.  Neighbors whose weight is ``<= 0`` are dropped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .fmcore import FeatureGrid
from .params import ParamSet, parse_params, take

__all__ = [
    "GraphError",
    "T_MAX",
    "SparseMap",
    "CollabNode",
    "extract_sparse_map",
    "build_nodes",
    "gnn_enhanced_weights",
    "select_collaborators",
    "DEFAULT_GNN_PARAMS",
    "TEST_GNN_PARAMS",
]

T_MAX = 0.5
STATE = 3
ROUNDS = 2


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseMap:
    bits: np.ndarray

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool, copy=True)
        if b.ndim != 2:
            raise ValueError("sparse map must be 2-D")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return isinstance(other, SparseMap) and np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True)
class CollabNode:
    agent_id: int
    map: SparseMap
    latency_s: float
    occupied_fraction: float
    overlap_with_ego: float
    is_ego: bool = False

    def __post_init__(self):
        if self.is_ego and self.latency_s != 0.0:
            raise GraphError("ego node must carry zero latency")

    def features(self) -> np.ndarray:
        return np.array([self.occupied_fraction, min(self.latency_s / T_MAX, 1.0), self.overlap_with_ego])


def extract_sparse_map(grid: FeatureGrid, threshold: float = 0.5) -> SparseMap:
    return SparseMap(grid.data.max(axis=0) > threshold)


def build_nodes(
    ego_id: int,
    ego_map: SparseMap,
    neighbor_maps: Mapping[int, SparseMap],
    latencies: Mapping[int, float],
) -> list[CollabNode]:
    """Ego node first, then neighbors in ascending id order."""
    cells = ego_map.height * ego_map.width
    denom = max(1, ego_map.count)
    nodes = [CollabNode(ego_id, ego_map, 0.0, ego_map.count / cells, 1.0, is_ego=True)]
    for j in sorted(neighbor_maps):
        m = neighbor_maps[j]
        if m.bits.shape != ego_map.bits.shape:
            raise GraphError(f"map of agent {j} has shape {m.bits.shape}, ego has {ego_map.bits.shape}")
        overlap = int(np.logical_and(m.bits, ego_map.bits).sum()) / denom
        nodes.append(CollabNode(j, m, float(latencies[j]), m.count / cells, overlap))
    return nodes


def _unpack(params: ParamSet):
    rounds = []
    for r in range(ROUNDS):
        rounds.append((
            take(params, f"gnn.r{r}.nbr.weight", (STATE, 2 * STATE)),
            take(params, f"gnn.r{r}.nbr.bias", (STATE,)),
            take(params, f"gnn.r{r}.ego.weight", (STATE, 2 * STATE)),
            take(params, f"gnn.r{r}.ego.bias", (STATE,)),
        ))
    return rounds, take(params, "gnn.readout.weight", (STATE,)), take(params, "gnn.readout.bias", (1,))[0]


def gnn_enhanced_weights(nodes: Sequence[CollabNode], params: ParamSet | None = None) -> dict[int, float]:
    egos = [n for n in nodes if n.is_ego]
    if len(egos) != 1:
        raise GraphError(f"expected exactly one ego node, got {len(egos)}")
    ego = egos[0]
    assert ego.latency_s == 0.0
    neighbors = sorted((n for n in nodes if not n.is_ego), key=lambda n: n.agent_id)
    if not neighbors:
        return {}
    rounds, w_out, b_out = _unpack(DEFAULT_GNN_PARAMS if params is None else params)

    s_ego = ego.features()
    s_nbr = np.stack([n.features() for n in neighbors])
    for w_n, b_n, w_e, b_e in rounds:
        s_nbr = np.tanh(s_nbr @ w_n[:, :STATE].T + s_ego @ w_n[:, STATE:].T + b_n)
        # fixed ascending-id summation keeps the mean permutation-exact
        acc = np.zeros(STATE)
        for row in s_nbr:
            acc = acc + row
        s_ego = np.tanh(w_e[:, :STATE] @ s_ego + w_e[:, STATE:] @ (acc / len(neighbors)) + b_e)
    scores = s_nbr @ w_out + b_out
    return {n.agent_id: float(v) for n, v in zip(neighbors, scores)}


def select_collaborators(weights: Mapping[int, float]) -> set[int]:
    return {j for j, w in weights.items() if w > 0}


# Frozen hand-set parameters.  Round one forms three detectors: freshness
# tanh(2.6 - 4*latency), overlap tanh(8*overlap), content tanh(1000*occupied).
# Round two mixes them with a dominant freshness gain.  A recent neighbor is
# always kept, one that still agrees with the ego saturates to weight 1.0
# exactly whatever its age up to roughly 0.45 s, a disjoint one is dropped
# past about 0.4 s, and anything older than about 0.49 s is dropped outright.
DEFAULT_GNN_PARAMS: ParamSet = parse_params("""
gnn.r0.nbr.weight   0 -4 0 0 0 0   0 0 8 0 0 0   1000 0 0 0 0 0
gnn.r0.nbr.bias     2.6 0 0
gnn.r0.ego.weight   1 0 0 0 0 0    0 1 0 0 0 0   0 0 1 0 0 0
gnn.r0.ego.bias     0 0 0
gnn.r1.nbr.weight   60 20 4 0 0 0   0 1 0 0 0 0   0 0 1 0 0 0
gnn.r1.nbr.bias     28.5 0 0
gnn.r1.ego.weight   1 0 0 0 0 0    0 1 0 0 0 0   0 0 1 0 0 0
gnn.r1.ego.bias     0 0 0
gnn.readout.weight  1.0 0 0
gnn.readout.bias    0.0
""")

# Small, all-nonzero set used by the hand-stepped reference test.
TEST_GNN_PARAMS: ParamSet = parse_params("""
gnn.r0.nbr.weight   1.0 0.0 0.0 0.5 0.0 0.0   0.0 1.0 0.0 0.0 0.5 0.0   0.0 0.0 1.0 0.0 0.0 0.5
gnn.r0.nbr.bias     0.1 -0.1 0.0
gnn.r0.ego.weight   0.5 0.0 0.0 0.5 0.0 0.0   0.0 0.5 0.0 0.0 0.5 0.0   0.0 0.0 0.5 0.0 0.0 0.5
gnn.r0.ego.bias     0.0 0.0 0.0
gnn.r1.nbr.weight   1.0 0.0 0.0 0.5 0.0 0.0   0.0 1.0 0.0 0.0 0.5 0.0   0.0 0.0 1.0 0.0 0.0 0.5
gnn.r1.nbr.bias     0.1 -0.1 0.0
gnn.r1.ego.weight   0.5 0.0 0.0 0.5 0.0 0.0   0.0 0.5 0.0 0.0 0.5 0.0   0.0 0.0 0.5 0.0 0.0 0.5
gnn.r1.ego.bias     0.0 0.0 0.0
gnn.readout.weight  1.0 -1.0 1.0
gnn.readout.bias    0.05
""")
