"""Analytic decoder and detection metrics (oriented IoU, all-point AP)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .fmcore import FeatureGrid
from .scenario import AgentState, ObjectBox, WorldState, box_corners, visible_objects

__all__ = [
    "Detection",
    "APResult",
    "AgentMetrics",
    "MetricsRecord",
    "IOU_THRESHOLDS",
    "decode",
    "to_world",
    "polygon_area",
    "clip_polygon",
    "iou",
    "match_detections",
    "average_precision",
    "in_grid_extent",
    "evaluate_agent",
    "evaluate",
]

IOU_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class Detection:
    center: tuple[float, float]
    length: float
    width: float
    yaw: float
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def _sort_key(d: Detection):
    return (-d.score, d.center[0], d.center[1])


def decode(h: FeatureGrid, occupancy_threshold: float = 0.3, block_channels: int | None = None) -> list[Detection]:
    """Threshold occupancy evidence and box each 4-connected component.

    Evidence is the max over channel 0 of every ``block_channels``-wide block.
    Boxes are axis-aligned in the grid's body frame.
    """
    step = block_channels or h.channels
    evidence = h.f64()[::step].max(axis=0)
    labels, n = ndimage.label(evidence > occupancy_threshold)
    if n == 0:
        return []
    dets = []
    cell = h.cell_size
    for idx, sl in enumerate(ndimage.find_objects(labels), 1):
        rows, cols = sl
        x0 = h.origin[0] + (cols.start - 0.5) * cell
        x1 = h.origin[0] + (cols.stop - 0.5) * cell
        y0 = h.origin[1] + (rows.start - 0.5) * cell
        y1 = h.origin[1] + (rows.stop - 0.5) * cell
        score = float(evidence[labels == idx].mean())
        dets.append(Detection(((x0 + x1) / 2, (y0 + y1) / 2), x1 - x0, y1 - y0, 0.0, min(max(score, 0.0), 1.0)))
    return sorted(dets, key=_sort_key)


def to_world(dets: Iterable[Detection], pose) -> list[Detection]:
    c, s = math.cos(pose[2]), math.sin(pose[2])
    out = []
    for d in dets:
        x, y = d.center
        out.append(Detection((c * x - s * y + pose[0], s * x + c * y + pose[1]), d.length, d.width,
                             d.yaw + pose[2], d.score))
    return sorted(out, key=_sort_key)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by convex counter-clockwise ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        def side(p):
            return (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax)
        inp, out = out, []
        for k in range(len(inp)):
            p, q = inp[k], inp[(k + 1) % len(inp)]
            sp, sq = side(p), side(q)
            if sp >= 0:
                out.append(p)
            if (sp >= 0) != (sq >= 0):
                t = sp / (sp - sq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _corners(b) -> np.ndarray:
    if isinstance(b, ObjectBox):
        return box_corners(b)
    return box_corners(ObjectBox(-1, b.center, b.length, b.width, b.yaw))


def iou(a, b) -> float:
    for box in (a, b):
        if not (box.length > 0 and box.width > 0):
            raise ValueError("IoU of a zero-area box")
    pa, pb = _corners(a), _corners(b)
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    if math.dist(a.center, b.center) > ra + rb:
        return 0.0
    inter = polygon_area(clip_polygon(pa, pb))
    union = a.length * a.width + b.length * b.width - inter
    return float(min(max(inter / union, 0.0), 1.0))


@dataclass(frozen=True)
class APResult:
    ap: float | None
    status: str  # "ok", "degenerate" (no gts, some dets) or "skipped" (neither)
    matched: frozenset = frozenset()
    n_gt: int = 0
    n_det: int = 0


def match_detections(dets: Sequence[Detection], gts: Sequence[ObjectBox], threshold: float):
    """Greedy score-order matching; returns per-detection TP flags and matched gt ids."""
    used: set[int] = set()
    tp = []
    for d in sorted(dets, key=_sort_key):
        best, best_iou = None, threshold
        for g in gts:
            if g.id in used:
                continue
            v = iou(d, g)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = g.id, v
        if best is not None:
            used.add(best)
        tp.append(best is not None)
    return tp, frozenset(used)


def average_precision(dets: Sequence[Detection], gts: Sequence[ObjectBox], threshold: float) -> APResult:
    if not gts:
        if dets:
            return APResult(0.0, "degenerate", n_det=len(dets))
        return APResult(None, "skipped")
    tp, matched = match_detections(dets, gts, threshold)
    if not tp:
        return APResult(0.0, "ok", matched, len(gts), 0)
    tps = np.cumsum(tp, dtype=np.float64)
    fps = np.cumsum(np.logical_not(tp), dtype=np.float64)
    recall = tps / len(gts)
    precision = tps / (tps + fps)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    ap = float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
    return APResult(ap, "ok", matched, len(gts), len(dets))


def in_grid_extent(agent: AgentState, point, height: int, width: int, cell_size: float) -> bool:
    c, s = math.cos(agent.pose[2]), math.sin(agent.pose[2])
    dx, dy = point[0] - agent.pose[0], point[1] - agent.pose[1]
    x, y = c * dx + s * dy, -s * dx + c * dy
    return abs(x) <= width * cell_size / 2 and abs(y) <= height * cell_size / 2


@dataclass
class AgentMetrics:
    agent_id: int
    ap: dict = field(default_factory=dict)           # threshold -> APResult
    recall_visible: dict = field(default_factory=dict)   # threshold -> float | None
    recall_occluded: dict = field(default_factory=dict)  # threshold -> float | None
    n_visible: int = 0
    n_occluded: int = 0


@dataclass
class MetricsRecord:
    agents: list
    mean_ap: dict  # threshold -> float | None, mean over agents with status "ok"


def _recall(ids: set, matched: frozenset):
    return None if not ids else len(ids & matched) / len(ids)


def evaluate_agent(agent: AgentState, world: WorldState, dets: Sequence[Detection],
                   gts: Sequence[ObjectBox] | None = None, thresholds=IOU_THRESHOLDS) -> AgentMetrics:
    """AP and visible/occluded recall for one agent.  ``gts`` defaults to every object."""
    gts = list(world.objects if gts is None else gts)
    seen = {o.id for o in visible_objects(agent, world)}
    vis = {g.id for g in gts if g.id in seen}
    occ = {g.id for g in gts if g.id not in seen}
    m = AgentMetrics(agent.id, n_visible=len(vis), n_occluded=len(occ))
    for t in thresholds:
        res = average_precision(dets, gts, t)
        m.ap[t] = res
        m.recall_visible[t] = _recall(vis, res.matched)
        m.recall_occluded[t] = _recall(occ, res.matched)
    return m


def evaluate(world: WorldState, detections: Mapping[int, Sequence[Detection]],
             thresholds=IOU_THRESHOLDS, gts: Mapping[int, Sequence[ObjectBox]] | None = None) -> MetricsRecord:
    agents = []
    for agent_id in sorted(detections):
        agent = world.agent(agent_id)
        agents.append(evaluate_agent(agent, world, detections[agent_id],
                                     None if gts is None else gts[agent_id], thresholds))
    mean = {}
    for t in thresholds:
        vals = [a.ap[t].ap for a in agents if a.ap[t].status == "ok"]
        mean[t] = float(np.mean(vals)) if vals else None
    return MetricsRecord(agents, mean)
