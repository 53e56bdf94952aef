import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iosicp.detect import (
    IOU_THRESHOLDS,
    Detection,
    average_precision,
    clip_polygon,
    decode,
    evaluate,
    evaluate_agent,
    in_grid_extent,
    iou,
    polygon_area,
    to_world,
)
from iosicp.encoder import GridGeometry, encode
from iosicp.fmcore import FeatureGrid
from iosicp.scenario import AgentState, ObjectBox, WorldState, box_corners

EGO = AgentState(0, (0.0, 0.0, 0.0), 40.0, is_ego=True)


def det(x, y, l=4.0, w=2.0, yaw=0.0, score=0.9):
    return Detection((x, y), l, w, yaw, score)


def test_detection_score_range():
    with pytest.raises(ValueError):
        det(0, 0, score=1.5)


def test_iou_examples():
    a = ObjectBox(0, (1.0, 1.0), 2.0, 2.0)
    assert iou(a, a) == 1.0
    assert iou(a, ObjectBox(1, (10.0, 0.0), 2.0, 2.0)) == 0.0
    assert iou(a, ObjectBox(1, (2.0, 1.0), 2.0, 2.0)) == pytest.approx(1 / 3, abs=1e-9)
    with pytest.raises(ValueError):
        iou(a, det(0, 0, l=0.0))


def _axis_aligned_iou(a, b):
    ix = max(0.0, min(a.center[0] + a.length / 2, b.center[0] + b.length / 2) - max(a.center[0] - a.length / 2, b.center[0] - b.length / 2))
    iy = max(0.0, min(a.center[1] + a.width / 2, b.center[1] + b.width / 2) - max(a.center[1] - a.width / 2, b.center[1] - b.width / 2))
    inter = ix * iy
    return inter / (a.length * a.width + b.length * b.width - inter)


def _inside(box, pts):
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = pts[:, 0] - box.center[0], pts[:, 1] - box.center[1]
    u, v = c * dx + s * dy, -s * dx + c * dy
    return (np.abs(u) <= box.length / 2) & (np.abs(v) <= box.width / 2)


def test_iou_against_sampled_area():
    # midpoint lattice over the joint bounding box stands in for random area samples
    r = np.random.default_rng(21)
    n = 300
    lattice = (np.stack(np.meshgrid(np.arange(n), np.arange(n)), axis=-1).reshape(-1, 2) + 0.5) / n
    worst = 0.0
    for _ in range(1000):
        a = ObjectBox(0, tuple(r.uniform(-2, 2, 2)), r.uniform(0.5, 4), r.uniform(0.5, 4), r.uniform(-math.pi, math.pi))
        b = ObjectBox(1, tuple(r.uniform(-2, 2, 2)), r.uniform(0.5, 4), r.uniform(0.5, 4), r.uniform(-math.pi, math.pi))
        corners = np.vstack([box_corners(a), box_corners(b)])
        lo, hi = corners.min(axis=0), corners.max(axis=0)
        pts = lo + (hi - lo) * lattice
        ia, ib = _inside(a, pts), _inside(b, pts)
        union = (ia | ib).sum()
        mc = (ia & ib).sum() / union if union else 0.0
        worst = max(worst, abs(iou(a, b) - mc))
    assert worst <= 1e-2


@settings(max_examples=200, deadline=None)
@given(*([st.floats(-3, 3)] * 4), *([st.floats(0.2, 5)] * 4), st.floats(-math.pi, math.pi))
def test_iou_properties(x1, y1, x2, y2, l1, w1, l2, w2, yaw):
    a = ObjectBox(0, (x1, y1), l1, w1)
    b = ObjectBox(1, (x2, y2), l2, w2)
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-9)
    assert v == pytest.approx(_axis_aligned_iou(a, b), abs=1e-9)
    ra = ObjectBox(0, (x1, y1), l1, w1, yaw)
    assert iou(ra, b) == pytest.approx(iou(b, ra), abs=1e-9)


def test_polygon_helpers():
    sq = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], float)
    assert polygon_area(sq) == 4.0
    assert polygon_area(sq[:2]) == 0.0
    half = clip_polygon(sq, np.array([[1, -1], [3, -1], [3, 3], [1, 3]], float))
    assert polygon_area(half) == pytest.approx(2.0)


def test_ap_examples():
    gt = [ObjectBox(0, (0.0, 0.0)), ObjectBox(1, (10.0, 0.0))]
    assert average_precision([det(0, 0), det(10, 0, score=0.5)], gt, 0.5).ap == 1.0
    assert average_precision([], gt, 0.5).ap == 0.0
    one = [ObjectBox(0, (0.0, 0.0))]
    assert average_precision([det(0, 0, score=0.9), det(20, 0, score=0.4)], one, 0.5).ap == 1.0
    assert average_precision([det(0, 0, score=0.4), det(20, 0, score=0.9)], one, 0.5).ap == 0.5


def test_ap_status_flags():
    r = average_precision([det(0, 0)], [], 0.5)
    assert (r.ap, r.status) == (0.0, "degenerate")
    r = average_precision([], [], 0.5)
    assert (r.ap, r.status) == (None, "skipped")


def test_ap_each_gt_matched_once():
    one = [ObjectBox(0, (0.0, 0.0))]
    r = average_precision([det(0, 0, score=0.9), det(0.1, 0, score=0.8)], one, 0.5)
    assert r.matched == frozenset({0})
    assert r.ap == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_ap_non_increasing_in_threshold(seed):
    r = np.random.default_rng(seed)
    gts = [ObjectBox(k, (8.0 * k, 0.0), 4.0, 2.0) for k in range(5)]
    dets = [det(8.0 * k + r.normal(0, 0.8), r.normal(0, 0.5), score=float(r.uniform(0.01, 1))) for k in range(6)]
    aps = [average_precision(dets, gts, t).ap for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(a >= b for a, b in zip(aps, aps[1:]))


def test_decode_examples():
    assert decode(FeatureGrid.zeros(4, 8, 8)) == []
    box = ObjectBox(0, (3.0, -2.0), 2.0, 2.0)
    w = WorldState(0.0, (EGO,), (box,))
    dets = decode(encode(EGO, w), 0.25)
    assert len(dets) == 1
    assert math.dist(dets[0].center, box.center) <= 1.0
    assert iou(dets[0], box) >= 0.5
    two = WorldState(0.0, (EGO,), (ObjectBox(0, (8.0, 0.0)), ObjectBox(1, (-8.0, 5.0), yaw=math.pi / 2)))
    assert len(decode(encode(EGO, two), 0.25)) == 2


def test_decode_reads_each_block():
    data = np.zeros((8, 4, 4))
    data[4, 1, 1] = 1.0  # occupancy of the second block only
    dets = decode(FeatureGrid.centered(data), 0.5, block_channels=4)
    assert len(dets) == 1
    assert decode(FeatureGrid.centered(data), 0.5, block_channels=8) == []


def test_decode_scores_clipped_and_ordered():
    data = np.zeros((3, 6, 6))
    data[0, 0, 0] = 3.0
    data[0, 4, 4] = 0.6
    dets = decode(FeatureGrid.centered(data), 0.5)
    assert [d.score for d in dets] == [1.0, pytest.approx(0.6)]


def test_to_world_rotates_and_translates():
    out = to_world([det(2.0, 0.0, yaw=0.0)], (1.0, 1.0, math.pi / 2))
    assert out[0].center == pytest.approx((1.0, 3.0))
    assert out[0].yaw == pytest.approx(math.pi / 2)


def test_in_grid_extent():
    g = GridGeometry()
    assert in_grid_extent(EGO, (31.9, 0.0), g.height, g.width, g.cell_size)
    assert not in_grid_extent(EGO, (32.5, 0.0), g.height, g.width, g.cell_size)


def test_evaluate_examples():
    boxes = (ObjectBox(0, (5.0, 0.0)), ObjectBox(1, (-6.0, 8.0)))
    w = WorldState(0.0, (EGO,), boxes)
    perfect = [Detection(b.center, b.length, b.width, b.yaw, 1.0) for b in boxes]
    rec = evaluate(w, {0: perfect})
    assert all(rec.mean_ap[t] == 1.0 for t in IOU_THRESHOLDS)
    empty = evaluate(WorldState(0.0, (EGO,), ()), {0: []})
    assert all(empty.agents[0].ap[t].status == "skipped" for t in IOU_THRESHOLDS)
    assert all(empty.mean_ap[t] is None for t in IOU_THRESHOLDS)


def test_occluded_recall_zero_for_single_agent():
    blocker, target = ObjectBox(0, (5.0, 0.0)), ObjectBox(1, (12.0, 0.0))
    w = WorldState(0.0, (EGO,), (blocker, target))
    m = evaluate_agent(EGO, w, decode(encode(EGO, w), 0.35))
    assert m.n_occluded == 1
    assert all(m.recall_occluded[t] == 0.0 for t in IOU_THRESHOLDS)
    assert m.recall_visible[0.3] == 1.0
