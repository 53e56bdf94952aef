"""Historical-prior hybrid attention fusion.

Pipeline for one ego::

    enhance -> multiscale_attention -> merge_scales
            -> concat_history -> short_term_attention -> refine

Cross-source attention is computed per cell: the ego's channel vector is the
query, every source's channel vector (ego included) is a key and a value, and
the scores ``q.k / sqrt(C)`` are softmax-normalized over sources.  Sources are
always visited in ascending agent id, so reordering the inputs cannot change a
single bit of the result.

The short-term stage is channel attention: a shared bottleneck MLP applied to
the average- and max-pooled channel descriptors, summed, then squashed by a
sigmoid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .fmcore import (
    FeatureGrid,
    ShapeError,
    concat_channels,
    elementwise_mul,
    resize_matrix,
    resize_to,
)
from .params import ParamSet, take
from .rng import stream
from .selection import SparseMap

__all__ = [
    "ConfigError",
    "DEFAULT_SCALES",
    "REDUCTION",
    "AttentionWeights",
    "Collaborator",
    "FuseResult",
    "enhance",
    "scale_dims",
    "multiscale_attention",
    "merge_scales",
    "concat_history",
    "short_term_attention",
    "refine",
    "fuse",
    "naive_mean_fusion",
    "attention_forward",
    "attention_backward",
    "short_term_forward",
    "short_term_backward",
    "default_sta_params",
    "zero_sta_params",
    "TEST_STA_PARAMS",
]

DEFAULT_SCALES = (1.0, 0.5, 0.25)
REDUCTION = 4
CURRENT_BIAS = 4.0
HISTORY_BIAS = -3.0
STA_INIT_STD = 0.05
STA_SEED = 20240607


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionWeights:
    scales: tuple[float, ...]
    source_ids: tuple[int, ...]
    # one (n_sources, h_S, w_S) array per scale, sources in ``source_ids`` order
    maps: tuple[np.ndarray, ...]

    def for_source(self, agent_id: int, scale_index: int = 0) -> np.ndarray:
        return self.maps[scale_index][self.source_ids.index(agent_id)]


@dataclass(frozen=True)
class Collaborator:
    agent_id: int
    grid: FeatureGrid
    sparse_map: SparseMap
    weight: float


@dataclass(frozen=True)
class FuseResult:
    grid: FeatureGrid
    attention: AttentionWeights
    short_term: np.ndarray
    source_ids: tuple[int, ...] = field(default=())


def enhance(grid: FeatureGrid, sparse_map: SparseMap, weight: float) -> FeatureGrid:
    if sparse_map.bits.shape != (grid.height, grid.width):
        raise ShapeError(f"map {sparse_map.bits.shape} does not match grid {grid.shape}")
    return elementwise_mul(elementwise_mul(grid, sparse_map.bits), float(weight))


def scale_dims(height: int, width: int, scale: float) -> tuple[int, int]:
    return max(1, int(round(height * scale))), max(1, int(round(width * scale)))


# -- array-level attention --------------------------------------------------

def attention_forward(ego: np.ndarray, sources: np.ndarray, scales=DEFAULT_SCALES):
    """Float64 forward of attention + scale merge.

    ``ego`` is C x H x W, ``sources`` is n x C x H x W (ego already among
    them).  Returns the merged C x H x W output and a per-scale cache.
    """
    if not scales:
        raise ConfigError("at least one attention scale is required")
    c, h, w = ego.shape
    inv = 1.0 / math.sqrt(c)
    cache = []
    out = np.zeros_like(ego)
    for s in scales:
        hs, ws = scale_dims(h, w, s)
        rh, rw = resize_matrix(h, hs), resize_matrix(w, ws)
        q = rh @ ego @ rw.T
        v = rh @ sources @ rw.T
        scores = (q[None] * v).sum(axis=1) * inv
        e = np.exp(scores - scores.max(axis=0, keepdims=True))
        a = e / e.sum(axis=0, keepdims=True)
        agg = np.zeros((c, hs, ws))
        for k in range(sources.shape[0]):
            agg = agg + a[k][None] * v[k]
        uh, uw = resize_matrix(hs, h), resize_matrix(ws, w)
        out = out + uh @ agg @ uw.T
        cache.append((rh, rw, uh, uw, q, v, a, agg))
    return out / len(scales), cache


def attention_backward(ego: np.ndarray, sources: np.ndarray, ego_index: int, upstream: np.ndarray,
                       scales=DEFAULT_SCALES):
    """Gradients of ``sum(upstream * merged)`` w.r.t. the ego grid and each source.

    The ego grid enters both as the query and as source ``ego_index``; its
    returned gradient covers both roles, and the corresponding row of the
    source gradient is left at zero.
    """
    ego = np.asarray(ego, np.float64)
    sources = np.asarray(sources, np.float64)
    _, cache = attention_forward(ego, sources, scales)
    c = ego.shape[0]
    inv = 1.0 / math.sqrt(c)
    g_ego = np.zeros_like(ego)
    g_src = np.zeros_like(sources)
    for rh, rw, uh, uw, q, v, a, agg in cache:
        g_agg = (uh.T @ upstream @ uw) / len(cache)
        g_v = a[:, None] * g_agg[None]
        g_a = (g_agg[None] * v).sum(axis=1)
        g_s = a * (g_a - (a * g_a).sum(axis=0, keepdims=True))
        g_q = (g_s[:, None] * v).sum(axis=0) * inv
        g_v = g_v + g_s[:, None] * q[None] * inv
        g_ego += rh.T @ g_q @ rw
        g_src += rh.T @ g_v @ rw
    g_ego += g_src[ego_index]
    g_src[ego_index] = 0.0
    return g_ego, g_src


# -- grid-level operations --------------------------------------------------

def _ordered_sources(ego_id: int, ego: FeatureGrid, sources: Mapping[int, FeatureGrid]):
    if ego_id in sources:
        raise ValueError(f"ego id {ego_id} also listed as a collaborator")
    merged = dict(sources)
    merged[ego_id] = ego
    ids = tuple(sorted(merged))
    for j in ids:
        if merged[j].shape != ego.shape:
            raise ShapeError(f"source {j} has shape {merged[j].shape}, ego has {ego.shape}")
    return ids, np.stack([merged[j].f64() for j in ids])


def multiscale_attention(ego_id: int, ego: FeatureGrid, sources: Mapping[int, FeatureGrid],
                         scales: Sequence[float] = DEFAULT_SCALES):
    """Per-scale attention weights and aggregated grids."""
    if not scales:
        raise ConfigError("at least one attention scale is required")
    ids, stack = _ordered_sources(ego_id, ego, sources)
    _, cache = attention_forward(ego.f64(), stack, tuple(scales))
    aggregates = []
    for s, (*_, a, agg) in zip(scales, cache):
        low = resize_to(ego, *scale_dims(ego.height, ego.width, s))
        aggregates.append(FeatureGrid(agg, low.cell_size, low.origin))
    weights = AttentionWeights(tuple(scales), ids, tuple(entry[6] for entry in cache))
    return weights, aggregates


def merge_scales(aggregates: Sequence[FeatureGrid], out_hw: tuple[int, int]) -> FeatureGrid:
    if not aggregates:
        raise ConfigError("nothing to merge")
    acc = None
    ref = None
    for g in aggregates:
        r = resize_to(g, *out_hw)
        acc = r.f64() if acc is None else acc + r.f64()
        if (g.height, g.width) == tuple(out_hw):
            ref = g
    if ref is None:
        ref = resize_to(aggregates[0], *out_hw)
    return FeatureGrid(acc / len(aggregates), ref.cell_size, ref.origin)


def concat_history(h_att: FeatureGrid, history: Sequence[FeatureGrid]) -> FeatureGrid:
    """Current block first, then history frames newest to oldest."""
    if not history:
        return h_att
    for k, frame in enumerate(history):
        if frame.channels != h_att.channels or not frame.same_geometry(h_att):
            raise ShapeError(f"history frame {k} geometry does not match the fused grid")
    return concat_channels([h_att, *history])


def _sta_layers(params: ParamSet, channels: int):
    if channels % REDUCTION:
        raise ConfigError(f"{channels} channels not divisible by reduction ratio {REDUCTION}")
    hidden = channels // REDUCTION
    try:
        return (
            take(params, "sta.fc1.weight", (hidden, channels)),
            take(params, "sta.fc1.bias", (hidden,)),
            take(params, "sta.fc2.weight", (channels, hidden)),
            take(params, "sta.fc2.bias", (channels,)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def short_term_forward(x: np.ndarray, params: ParamSet):
    """Float64 channel attention; returns (weights, cache)."""
    w1, b1, w2, b2 = _sta_layers(params, x.shape[0])
    flat = x.reshape(x.shape[0], -1)
    pools = (flat.mean(axis=1), flat.max(axis=1))
    z = np.zeros(x.shape[0])
    hidden = []
    for p in pools:
        pre = w1 @ p + b1
        act = np.maximum(pre, 0.0)
        z = z + w2 @ act + b2
        hidden.append((p, pre, act))
    return _sigmoid(z), (w1, b1, w2, b2, flat, hidden)


def short_term_attention(h_h: FeatureGrid, params: ParamSet) -> np.ndarray:
    weights, _ = short_term_forward(h_h.f64(), params)
    return weights


def refine(h_h: FeatureGrid, weights: np.ndarray) -> FeatureGrid:
    w = np.asarray(weights, np.float64)
    if w.shape != (h_h.channels,):
        raise ShapeError(f"{w.size} weights for {h_h.channels} channels")
    return h_h.with_data(h_h.f64() * w[:, None, None])


def short_term_backward(x: np.ndarray, params: ParamSet, upstream: np.ndarray):
    """Gradients of ``sum(upstream * refine(x, sta(x)))`` w.r.t. ``x`` and the MLP parameters.

    Max pooling routes its gradient to the first arg-max cell of each channel.
    """
    x = np.asarray(x, np.float64)
    weights, (w1, b1, w2, b2, flat, hidden) = short_term_forward(x, params)
    c = x.shape[0]
    g_x = upstream * weights[:, None, None]
    g_w = (upstream * x).reshape(c, -1).sum(axis=1)
    g_z = g_w * weights * (1.0 - weights)
    grads = {
        "sta.fc1.weight": np.zeros_like(w1),
        "sta.fc1.bias": np.zeros_like(b1),
        "sta.fc2.weight": np.zeros_like(w2),
        "sta.fc2.bias": 2.0 * g_z,
    }
    g_pools = []
    for p, pre, act in hidden:
        grads["sta.fc2.weight"] += np.outer(g_z, act)
        g_pre = (w2.T @ g_z) * (pre > 0)
        grads["sta.fc1.weight"] += np.outer(g_pre, p)
        grads["sta.fc1.bias"] += g_pre
        g_pools.append(w1.T @ g_pre)
    g_flat = np.zeros_like(flat)
    g_flat += g_pools[0][:, None] / flat.shape[1]
    arg = flat.argmax(axis=1)
    g_flat[np.arange(c), arg] += g_pools[1]
    g_x = g_x + g_flat.reshape(x.shape)
    return g_x, {k: v.ravel() for k, v in grads.items()}


def fuse(ego_id: int, ego: FeatureGrid, collaborators: Sequence[Collaborator],
         history: Sequence[FeatureGrid], sta_params: ParamSet | None = None,
         scales: Sequence[float] = DEFAULT_SCALES) -> FuseResult:
    """Full fusion for one ego.  ``collaborators`` must already be selected and
    warped into the ego frame."""
    enhanced = {}
    for col in collaborators:
        enhanced[col.agent_id] = enhance(col.grid, col.sparse_map, col.weight)
    weights, aggregates = multiscale_attention(ego_id, ego, enhanced, scales)
    h_att = merge_scales(aggregates, (ego.height, ego.width))
    h_h = concat_history(h_att, history)
    if sta_params is None:
        sta_params = default_sta_params(h_h.channels, ego.channels)
    st = short_term_attention(h_h, sta_params)
    return FuseResult(refine(h_h, st), weights, st, weights.source_ids)


def naive_mean_fusion(ego: FeatureGrid, others: Sequence[FeatureGrid]) -> FeatureGrid:
    """Baseline: plain per-cell mean of the ego grid and every neighbor grid."""
    acc = ego.f64()
    for g in others:
        if g.shape != ego.shape:
            raise ShapeError("neighbor grid shape differs from ego")
        acc = acc + g.f64()
    return ego.with_data(acc / (1 + len(others)))


# -- parameter sets ---------------------------------------------------------

def zero_sta_params(channels: int) -> ParamSet:
    hidden = channels // REDUCTION
    return {
        "sta.fc1.weight": np.zeros(hidden * channels),
        "sta.fc1.bias": np.zeros(hidden),
        "sta.fc2.weight": np.zeros(channels * hidden),
        "sta.fc2.bias": np.zeros(channels),
    }


def default_sta_params(channels: int, block_channels: int | None = None) -> ParamSet:
    """Frozen seeded MLP.  The output bias favors the current fused block over
    history blocks (``block_channels`` wide each)."""
    if channels % REDUCTION:
        raise ConfigError(f"{channels} channels not divisible by reduction ratio {REDUCTION}")
    hidden = channels // REDUCTION
    block = channels if block_channels is None else block_channels
    rng = stream(STA_SEED, "sta", channels)
    bias = np.full(channels, HISTORY_BIAS)
    bias[:block] = CURRENT_BIAS
    return {
        "sta.fc1.weight": STA_INIT_STD * rng.standard_normal(hidden * channels),
        "sta.fc1.bias": np.zeros(hidden),
        "sta.fc2.weight": STA_INIT_STD * rng.standard_normal(channels * hidden),
        "sta.fc2.bias": bias,
    }


TEST_STA_PARAMS: ParamSet = {
    "sta.fc1.weight": np.array([0.5, -0.25, 0.25, 1.0]),
    "sta.fc1.bias": np.array([0.1]),
    "sta.fc2.weight": np.array([1.0, -0.5, 0.25, 2.0]),
    "sta.fc2.bias": np.array([0.0, 0.1, -0.1, 0.2]),
}
