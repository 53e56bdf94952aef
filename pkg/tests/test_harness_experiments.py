from dataclasses import replace

import pytest

from iosicp.harness.config import RunConfig, SweepSpec
from iosicp.harness.experiments import (
    ABLATION_VARIANTS,
    CSV_COLUMNS,
    SCHEMA_LINE,
    ResultRow,
    ablate_jobs,
    replicate_seeds,
    rows_to_csv,
    run_episode,
    run_protocol,
    summarize,
    summary_text,
    sweep_distance,
    sweep_latency_jobs,
    sweep_noise,
)
from iosicp.harness.plots import parse_rows
from iosicp.harness.scenes import SceneOptions, make_scene
from iosicp.rng import derive_seed

SMALL = RunConfig(replicates=2, scene_options=SceneOptions(n_objects=8))


def test_replicate_seeds():
    assert replicate_seeds(SMALL) == [derive_seed(0, "replicate", 0), derive_seed(0, "replicate", 1)]


def test_run_episode_deterministic_rows():
    seed = replicate_seeds(SMALL)[0]
    a = run_episode(SMALL, seed)
    assert rows_to_csv(a) == rows_to_csv(run_episode(SMALL, seed))
    n_agents = len(make_scene(SMALL.scene, seed, SMALL.scene_options).world.agents)
    assert len(a) == 3 * n_agents
    assert {r.iou_threshold for r in a} == {0.3, 0.5, 0.7}


def test_baseline_episode_runs():
    cfg = replace(SMALL, hpha_on=False, selection_on=False)
    rows = run_episode(cfg, 3)
    assert rows and all(r.ap is None or 0.0 <= r.ap <= 1.0 for r in rows)


def test_csv_layout_and_roundtrip():
    rows = run_episode(SMALL, 4)
    text = rows_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == SCHEMA_LINE
    assert lines[1] == ",".join(CSV_COLUMNS)
    back = parse_rows(text)
    assert rows_to_csv(back) == text


def test_skipped_rows_written_and_excluded():
    rows = [
        ResultRow("r", 1, "0", 0, 0.5, None, None, None, 0.0, 0),
        ResultRow("r", 2, "0", 0, 0.5, 0.5, 1.0, None, 0.1, 1),
    ]
    assert ",skipped," in rows_to_csv(rows)
    (s,) = summarize(rows)
    assert s.mean_ap == 0.5 and s.n == 1
    assert "r,0,0.5,0.5000,1" in summary_text([s])


def test_latency_jobs_cover_static_control():
    cfg = replace(SMALL, sweep=SweepSpec(latency_s=(0.0, 0.4)))
    jobs = sweep_latency_jobs(cfg)
    assert len(jobs) == 2 * 2 * 2
    assert {j[0] for j in jobs} == {"latency-speed10", "latency-speed0"}
    speed0 = [j for j in jobs if j[0] == "latency-speed0"]
    assert all(j[4].speed == (0.0, 0.0) for j in speed0)


def test_negative_latency_rejected():
    cfg = replace(SMALL, sweep=SweepSpec(latency_s=(0.0, -0.1)))
    with pytest.raises(ValueError):
        sweep_latency_jobs(cfg)


def test_ablation_shares_worlds():
    jobs = ablate_jobs(SMALL)
    assert len(jobs) == 2 * len(ABLATION_VARIANTS) * 2
    by_label = {}
    for j in jobs:
        by_label.setdefault((j[0], j[2]), []).append(j[1])
    seeds = list(by_label.values())
    assert all(s == seeds[0] for s in seeds)


def test_ablation_rows_for_every_threshold():
    cfg = replace(SMALL, replicates=1, sweep=SweepSpec(ablation_sets=("dense-traffic",)))
    rows = run_protocol(ablate_jobs(cfg))
    labels = {(r.sweep_value, r.iou_threshold) for r in rows}
    assert labels == {(v[0], t) for v in ABLATION_VARIANTS for t in (0.3, 0.5, 0.7)}


def test_distance_buckets():
    cfg = replace(SMALL, replicates=1, sweep=SweepSpec(distance_m=(10.0, 500.0)))
    rows = sweep_distance(cfg)
    assert {r.sweep_value for r in rows} == {"10", "500"}


def test_distance_bucket_without_objects_skipped():
    cfg = replace(SMALL, replicates=1, sweep=SweepSpec(distance_m=(200.0, 300.0)))
    rows = sweep_distance(cfg)
    assert all(r.ap is None for r in rows if r.sweep_value == "300")


def test_zero_noise_matches_no_noise_rows():
    cfg = replace(SMALL, replicates=1, sweep=SweepSpec(noise_std=(0.0,)))
    rows = sweep_noise(cfg)
    seed = replicate_seeds(cfg)[0]
    plain = [r for r in run_episode(replace(cfg, all_egos=False), seed)]
    assert [r.ap for r in rows] == [r.ap for r in plain]


def test_parallel_matches_serial():
    cfg = replace(SMALL, replicates=2, sweep=SweepSpec(latency_s=(0.0, 0.2)))
    jobs = sweep_latency_jobs(cfg)
    assert rows_to_csv(run_protocol(jobs, workers=2)) == rows_to_csv(run_protocol(jobs, workers=1))
