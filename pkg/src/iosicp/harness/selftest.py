"""Quick end-to-end check: every protocol at a small replicate count plus a few
numerical invariants.  Output files depend only on the config and seed."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..channel import path_loss_db
from ..fmcore import FeatureGrid
from ..hpha import attention_backward, attention_forward, multiscale_attention
from ..rng import stream
from .config import RunConfig
from .experiments import (
    ablate,
    replicate_seeds,
    occlusion_recall,
    run_episode,
    summarize,
    sweep_distance,
    sweep_latency,
    sweep_noise,
    write_rows,
)
from .plots import render_plots

__all__ = ["CheckResult", "run_selftest"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _check_path_loss() -> CheckResult:
    v = path_loss_db(100.0, 5.9)
    return CheckResult("path-loss", abs(v - 87.417) <= 1e-3, f"PL(100 m, 5.9 GHz) = {v:.4f} dB")


def _check_attention(seed: int, n: int = 20) -> CheckResult:
    worst = 0.0
    for i in range(n):
        rng = stream(seed, "selftest-attention", i)
        c, h, w = 4, 8, 8
        ego = FeatureGrid(rng.standard_normal((c, h, w)), 1.0, (0.0, 0.0))
        others = {j: FeatureGrid(rng.standard_normal((c, h, w)), 1.0, (0.0, 0.0)) for j in (3, 1, 2)}
        weights, _ = multiscale_attention(0, ego, others)
        for m in weights.maps:
            worst = max(worst, float(np.abs(m.sum(axis=0) - 1.0).max()))
    return CheckResult("attention-normalization", worst <= 1e-6, f"max |sum - 1| = {worst:.2e} over {n} instances")


def _check_gradient(seed: int, n: int = 5) -> CheckResult:
    h_fd = 1e-4
    worst = 0.0
    for i in range(n):
        rng = stream(seed, "selftest-gradient", i)
        ego = rng.standard_normal((3, 4, 4))
        src = np.stack([ego, rng.standard_normal((3, 4, 4))])
        up = rng.standard_normal((3, 4, 4))
        g_ego, _ = attention_backward(ego, src, 0, up)
        num = np.zeros_like(ego)
        for idx in np.ndindex(ego.shape):
            vals = []
            for sgn in (1.0, -1.0):
                e = ego.copy()
                e[idx] += sgn * h_fd
                s = src.copy()
                s[0] = e
                vals.append(float((attention_forward(e, s)[0] * up).sum()))
            num[idx] = (vals[0] - vals[1]) / (2 * h_fd)
        rel = np.abs(num - g_ego).max() / max(np.abs(num).max(), 1e-12)
        worst = max(worst, float(rel))
    return CheckResult("attention-gradient", worst < 1e-4, f"max relative error {worst:.2e} over {n} instances")


def _check_occlusion(cfg: RunConfig) -> CheckResult:
    fused, single = occlusion_recall(cfg)
    f, s1 = float(np.mean(fused)), float(np.mean(single))
    return CheckResult("occlusion-recovery", f >= 0.9 and s1 == 0.0,
                       f"occluded recall fused {f:.3f} vs single {s1:.3f} over {len(fused)} scenes")


def run_selftest(cfg: RunConfig, out_dir: Path) -> list[CheckResult]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checks = [_check_path_loss(), _check_attention(cfg.seed), _check_gradient(cfg.seed)]
    seeds = replicate_seeds(cfg)
    checks.append(_check_occlusion(cfg))

    rows = [r for s in seeds for r in run_episode(cfg, s)]
    write_rows(rows, out_dir / "run.csv")
    outputs = {
        "sweep_latency": (sweep_latency(cfg), "collaborator latency (s)"),
        "sweep_distance": (sweep_distance(cfg), "distance bucket upper edge (m)"),
        "sweep_noise": (sweep_noise(cfg), "localization noise std"),
        "ablation": (ablate(cfg), "configuration"),
    }
    for stem, (rows, xlabel) in outputs.items():
        write_rows(rows, out_dir / f"{stem}.csv")
        render_plots(rows, out_dir, stem, xlabel)

    static = [s for s in summarize(outputs["sweep_latency"][0])
              if s.run_id == "latency-speed0" and s.iou_threshold == 0.5]
    aps = {s.mean_ap for s in static}
    checks.append(CheckResult("static-latency-invariance", len(aps) == 1,
                              f"{len(aps)} distinct mean AP@0.5 value(s) across {len(static)} latencies"))
    (out_dir / "checks.txt").write_text("".join(c.line() + "\n" for c in checks))
    return checks
