"""Experiment protocols and their delimited output.

All protocols share one seed discipline: replicate ``i`` uses
``derive_seed(base_seed, "replicate", i)`` for its world and for every
stochastic draw inside the pipeline, so identical replicates see identical
worlds across protocols and configurations.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..detect import IOU_THRESHOLDS, evaluate_agent
from ..rng import derive_seed
from .config import RunConfig
from .pipeline import PipelineSettings, ground_truth, perceive
from .scenes import Scene, make_scene

__all__ = [
    "CSV_COLUMNS",
    "SCHEMA_LINE",
    "ResultRow",
    "SummaryRow",
    "replicate_seeds",
    "settings_for",
    "run_episode",
    "run_protocol",
    "sweep_latency",
    "sweep_distance",
    "sweep_noise",
    "ablate",
    "occlusion_recall",
    "summarize",
    "rows_to_csv",
    "write_rows",
    "summary_text",
    "SKIPPED",
    "ABLATION_VARIANTS",
]

SCHEMA_LINE = "# iosicp-results schema=1"
CSV_COLUMNS = (
    "run_id",
    "seed",
    "sweep_value",
    "agent_id",
    "iou_threshold",
    "ap",
    "recall_visible",
    "recall_occluded",
    "mean_latency_s",
    "n_collaborators",
)
SKIPPED = "skipped"

# (label, hpha_on, selection_on), in table order
ABLATION_VARIANTS = (
    ("baseline", False, False),
    ("+hpha", True, False),
    ("+hpha+selection", True, True),
)


@dataclass(frozen=True)
class ResultRow:
    run_id: str
    seed: int
    sweep_value: str
    agent_id: int
    iou_threshold: float
    ap: float | None  # None when the ego had no ground truth in scope
    recall_visible: float | None
    recall_occluded: float | None
    mean_latency_s: float
    n_collaborators: int

    def cells(self) -> list[str]:
        def num(v):
            return "" if v is None else f"{v:.6f}"
        return [
            self.run_id,
            str(self.seed),
            self.sweep_value,
            str(self.agent_id),
            f"{self.iou_threshold:g}",
            SKIPPED if self.ap is None else f"{self.ap:.6f}",
            num(self.recall_visible),
            num(self.recall_occluded),
            f"{self.mean_latency_s:.6f}",
            str(self.n_collaborators),
        ]


@dataclass(frozen=True)
class SummaryRow:
    run_id: str
    sweep_value: str
    iou_threshold: float
    mean_ap: float | None
    n: int


def fmt_value(v) -> str:
    return v if isinstance(v, str) else f"{v:g}"


def replicate_seeds(cfg: RunConfig) -> list[int]:
    return [derive_seed(cfg.seed, "replicate", i) for i in range(cfg.replicates)]


def settings_for(cfg: RunConfig, scene: Scene, **overrides) -> PipelineSettings:
    base = PipelineSettings(
        geometry=scene.geometry,
        link=cfg.link,
        history_frames=cfg.history_frames,
        sparse_threshold=cfg.sparse_threshold,
        decode_threshold=cfg.decode_threshold,
        comm_range_m=cfg.comm_range_m,
        hpha_on=cfg.hpha_on,
        selection_on=cfg.selection_on,
        gnn_params=cfg.gnn_params,
        sta_params=cfg.sta_params,
    )
    return replace(base, **overrides)


def _ego_rows(run_id, seed, sweep_value, scene: Scene, settings: PipelineSettings, outcome,
              bucket: tuple[float, float] | None = None) -> list[ResultRow]:
    world = scene.world
    ego = world.agent(outcome.ego_id)
    gts = ground_truth(world, ego.id, settings.geometry)
    dets = outcome.detections
    if bucket is not None:
        lo, hi = bucket

        def inside(p):
            return lo < math.dist(p, ego.position) <= hi
        gts = [g for g in gts if inside(g.center)]
        dets = [d for d in dets if inside(d.center)]
    m = evaluate_agent(ego, world, dets, gts)
    rows = []
    for t in IOU_THRESHOLDS:
        res = m.ap[t]
        rows.append(ResultRow(
            run_id, seed, fmt_value(sweep_value), ego.id, t,
            res.ap if res.status == "ok" else None,
            m.recall_visible[t], m.recall_occluded[t],
            outcome.mean_latency_s, len(outcome.selected),
        ))
    return rows


# A job is a plain tuple so it pickles cleanly for worker processes:
# (run_id, seed, sweep_value, scene_name, SceneOptions, settings overrides, all_egos, buckets, cfg)

def _run_job(job) -> list[ResultRow]:
    run_id, seed, sweep_value, scene_name, opts, overrides, all_egos, buckets, cfg = job
    scene = make_scene(scene_name, seed, opts)
    settings = settings_for(cfg, scene, **overrides)
    egos = [a.id for a in scene.world.agents] if all_egos else [scene.world.ego.id]
    rows: list[ResultRow] = []
    for ego_id in egos:
        outcome = perceive(scene.world, ego_id, settings, seed, scene.forced_latency)
        if buckets is None:
            rows.extend(_ego_rows(run_id, seed, sweep_value, scene, settings, outcome))
            continue
        lo = 0.0
        for hi in buckets:
            rows.extend(_ego_rows(run_id, seed, hi, scene, settings, outcome, (lo, hi)))
            lo = hi
    return rows


def run_protocol(jobs: Sequence[tuple], workers: int = 1) -> list[ResultRow]:
    """Execute jobs and return their rows in job order whatever the completion order."""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_job, jobs))
    else:
        chunks = [_run_job(j) for j in jobs]
    return [row for chunk in chunks for row in chunk]


def run_episode(cfg: RunConfig, seed: int, run_id: str = "run", sweep_value="") -> list[ResultRow]:
    return _run_job((run_id, seed, sweep_value, cfg.scene, cfg.scene_options, {}, cfg.all_egos, None, cfg))


def run_jobs(cfg: RunConfig) -> list[tuple]:
    return [("run", s, "", cfg.scene, cfg.scene_options, {}, cfg.all_egos, None, cfg) for s in replicate_seeds(cfg)]


def sweep_latency_jobs(cfg: RunConfig) -> list[tuple]:
    speeds = [cfg.sweep.latency_speed]
    if cfg.sweep.latency_speed != 0.0:
        speeds.append(0.0)
    jobs = []
    for speed in speeds:
        run_id = f"latency-speed{speed:g}"
        for tau in cfg.sweep.latency_s:
            if tau < 0:
                raise ValueError(f"latency must be non-negative, got {tau}")
            opts = replace(cfg.scene_options, speed=(speed, speed), probe_latency_s=float(tau))
            for s in replicate_seeds(cfg):
                jobs.append((run_id, s, tau, "latency-probe", opts, {}, False, None, cfg))
    return jobs


def sweep_distance_jobs(cfg: RunConfig) -> list[tuple]:
    buckets = tuple(cfg.sweep.distance_m)
    return [("distance-sparse-highway", s, "", "sparse-highway", cfg.scene_options, {}, False, buckets, cfg)
            for s in replicate_seeds(cfg)]


def sweep_noise_jobs(cfg: RunConfig) -> list[tuple]:
    jobs = []
    for std in cfg.sweep.noise_std:
        for s in replicate_seeds(cfg):
            jobs.append((f"noise-{cfg.scene}", s, std, cfg.scene, cfg.scene_options,
                         {"noise_std": (float(std), float(std))}, False, None, cfg))
    return jobs


def ablate_jobs(cfg: RunConfig) -> list[tuple]:
    jobs = []
    for scene_name in cfg.sweep.ablation_sets:
        opts = replace(cfg.scene_options, stale_neighbor_s=cfg.sweep.ablation_stale_s)
        for label, hpha_on, selection_on in ABLATION_VARIANTS:
            over = {"hpha_on": hpha_on, "selection_on": selection_on}
            for s in replicate_seeds(cfg):
                jobs.append((f"ablation-{scene_name}", s, label, scene_name, opts, over, False, None, cfg))
    return jobs


def sweep_latency(cfg: RunConfig) -> list[ResultRow]:
    return run_protocol(sweep_latency_jobs(cfg), cfg.workers)


def sweep_distance(cfg: RunConfig) -> list[ResultRow]:
    return run_protocol(sweep_distance_jobs(cfg), cfg.workers)


def sweep_noise(cfg: RunConfig) -> list[ResultRow]:
    return run_protocol(sweep_noise_jobs(cfg), cfg.workers)


def ablate(cfg: RunConfig) -> list[ResultRow]:
    return run_protocol(ablate_jobs(cfg), cfg.workers)


def occlusion_recall(cfg: RunConfig, iou_threshold: float = 0.5) -> tuple[list[float], list[float]]:
    """Occluded-object recall per occlusion scene, fused versus the ego alone."""
    fused, single = [], []
    for s in replicate_seeds(cfg):
        scene = make_scene("occlusion", s, cfg.scene_options)
        settings = settings_for(cfg, scene)
        world = scene.world
        gts = ground_truth(world, world.ego.id, scene.geometry)
        out = perceive(world, world.ego.id, settings, s, scene.forced_latency)
        fused.append(evaluate_agent(world.ego, world, out.detections, gts).recall_occluded[iou_threshold])
        alone = replace(world, agents=(world.ego,))
        out1 = perceive(alone, alone.ego.id, settings, s)
        single.append(evaluate_agent(alone.ego, alone, out1.detections, gts).recall_occluded[iou_threshold])
    return fused, single


def summarize(rows: Iterable[ResultRow]) -> list[SummaryRow]:
    """Mean AP per (run id, sweep value, threshold), skipped rows left out."""
    groups: dict[tuple, list[float]] = {}
    counts: dict[tuple, int] = {}
    for r in rows:
        key = (r.run_id, r.sweep_value, r.iou_threshold)
        groups.setdefault(key, [])
        counts[key] = counts.get(key, 0) + 1
        if r.ap is not None:
            groups[key].append(r.ap)
    out = []
    for key, vals in groups.items():
        out.append(SummaryRow(*key, float(np.mean(vals)) if vals else None, len(vals)))
    return out


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def write_rows(rows: Iterable[ResultRow], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows))
    return path


def summary_text(summary: Sequence[SummaryRow]) -> str:
    lines = ["run_id,sweep_value,iou_threshold,mean_ap,n"]
    for s in summary:
        ap = SKIPPED if s.mean_ap is None else f"{s.mean_ap:.4f}"
        lines.append(f"{s.run_id},{s.sweep_value},{s.iou_threshold:g},{ap},{s.n}")
    return "\n".join(lines) + "\n"
