"""Read result CSVs back and render one mean-AP line plot per IoU threshold.

The SVG writer is pinned (fixed hash salt, no date stamp, text as paths) so
the same CSV always renders to the same bytes.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import CSV_COLUMNS, SCHEMA_LINE, SKIPPED, ResultRow, summarize  # noqa: E402

__all__ = ["CsvParseError", "parse_rows", "read_rows", "render_plots", "emit_plots"]

_RC = {
    "svg.hashsalt": "iosicp",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 5,
}


class CsvParseError(ValueError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


def _opt_float(text: str, row: int, name: str):
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise CsvParseError(row, f"{name} is not a number: {text!r}") from None


def parse_rows(text: str) -> list[ResultRow]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCHEMA_LINE:
        raise CsvParseError(1, f"missing schema line {SCHEMA_LINE!r}")
    reader = csv.reader(io.StringIO("\n".join(lines[1:])))
    rows = []
    for offset, cells in enumerate(reader):
        lineno = offset + 2
        if offset == 0:
            if tuple(cells) != CSV_COLUMNS:
                raise CsvParseError(lineno, f"unexpected header {cells}")
            continue
        if not cells:
            continue
        if len(cells) != len(CSV_COLUMNS):
            raise CsvParseError(lineno, f"expected {len(CSV_COLUMNS)} fields, got {len(cells)}")
        run_id, seed, sweep, agent, thr, ap, rv, ro, lat, ncol = cells
        try:
            seed_i, agent_i, ncol_i = int(seed), int(agent), int(ncol)
        except ValueError:
            raise CsvParseError(lineno, "seed, agent_id and n_collaborators must be integers") from None
        thr_f = _opt_float(thr, lineno, "iou_threshold")
        if thr_f is None:
            raise CsvParseError(lineno, "iou_threshold is empty")
        ap_f = None if ap == SKIPPED else _opt_float(ap, lineno, "ap")
        if ap != SKIPPED and (ap_f is None or not 0.0 <= ap_f <= 1.0):
            raise CsvParseError(lineno, f"ap must be in [0, 1] or {SKIPPED!r}, got {ap!r}")
        lat_f = _opt_float(lat, lineno, "mean_latency_s")
        rows.append(ResultRow(run_id, seed_i, sweep, agent_i, thr_f, ap_f,
                              _opt_float(rv, lineno, "recall_visible"), _opt_float(ro, lineno, "recall_occluded"),
                              0.0 if lat_f is None else lat_f, ncol_i))
    if not rows:
        raise CsvParseError(max(len(lines), 1), "no data rows")
    return rows


def read_rows(path: Path | str) -> list[ResultRow]:
    return parse_rows(Path(path).read_text())


def _axis_values(values: list[str]):
    try:
        return [float(v) for v in values], None
    except ValueError:
        return list(range(len(values))), values


def render_plots(rows: list[ResultRow], out_dir: Path | str, stem: str, xlabel: str = "sweep value") -> list[Path]:
    """One SVG per IoU threshold; each run id becomes one line."""
    summary = summarize(rows)
    thresholds = sorted({s.iou_threshold for s in summary})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    with plt.rc_context(_RC):
        for t in thresholds:
            fig, ax = plt.subplots(figsize=(4.8, 3.4))
            labels = None
            for run_id in dict.fromkeys(s.run_id for s in summary):
                pts = [s for s in summary if s.run_id == run_id and s.iou_threshold == t]
                xs, labels = _axis_values([p.sweep_value for p in pts])
                ys = [float("nan") if p.mean_ap is None else p.mean_ap for p in pts]
                ax.plot(xs, ys, marker="o", label=run_id)
            if labels is not None:
                ax.set_xticks(range(len(labels)))
                ax.set_xticklabels(labels)
            ax.set_xlabel(xlabel)
            ax.set_ylabel("mean AP")
            ax.set_ylim(-0.02, 1.02)
            ax.set_title(f"mean AP at IoU {t:g}")
            ax.legend(loc="best", frameon=False)
            fig.tight_layout()
            path = out_dir / f"{stem}_iou{t:g}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths


def emit_plots(csv_path: Path | str, out_dir: Path | str | None = None, xlabel: str = "sweep value") -> list[Path]:
    csv_path = Path(csv_path)
    rows = read_rows(csv_path)
    return render_plots(rows, out_dir or csv_path.parent, csv_path.stem, xlabel)
