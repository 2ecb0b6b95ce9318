"""Evaluation output: delimited table, aligned text table, and figures.

The TSV is the machine-readable artifact and is byte-stable for a fixed
suite and seed; the PNG figures render next to it for human review.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .harness import MetricsRow

logger = logging.getLogger(__name__)

COLUMNS = (
    "template",
    "seed",
    "profile",
    "steps_total",
    "steps_completed",
    "completion_rate",
    "completion_frames",
    "boundary_f1",
    "next_step_accuracy",
    "off_task_frames",
)


def _cell(row: MetricsRow, column: str) -> str:
    value = getattr(row, column)
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def metrics_tsv(rows: list[MetricsRow]) -> str:
    lines = ["\t".join(COLUMNS)]
    lines.extend("\t".join(_cell(row, c) for c in COLUMNS) for row in rows)
    return "\n".join(lines) + "\n"


def metrics_text(rows: list[MetricsRow]) -> str:
    cells = [list(COLUMNS)] + [[_cell(row, c) for c in COLUMNS] for row in rows]
    widths = [max(len(line[i]) for line in cells) for i in range(len(COLUMNS))]
    out = []
    for line in cells:
        out.append("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(line)))
    return "\n".join(out) + "\n"


def render_figures(rows: list[MetricsRow], out_dir: Path) -> list[Path]:
    """Per-run completion and accuracy bar charts, one PNG each."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if not rows:
        return written
    labels = [f"{r.template}\n#{r.seed} {r.profile}" for r in rows]
    series = (
        ("completion_rate", "Completion rate", "fig_completion_rate.png"),
        ("next_step_accuracy", "Next-step accuracy", "fig_next_step_accuracy.png"),
    )
    for attr, title, filename in series:
        fig, ax = plt.subplots(figsize=(max(6.0, 0.8 * len(rows)), 3.2))
        values = [getattr(r, attr) for r in rows]
        ax.bar(range(len(rows)), values, color="#4878b0")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_ylim(0.0, 1.05)
        ax.set_ylabel(title)
        ax.axhline(1.0, color="#999999", linewidth=0.8, linestyle="--")
        fig.tight_layout()
        path = out_dir / filename
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def write_report(rows: list[MetricsRow], out_dir: str | Path, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}
    tsv = out / "metrics.tsv"
    tsv.write_text(metrics_tsv(rows), "utf-8")
    artifacts["tsv"] = tsv
    txt = out / "metrics.txt"
    txt.write_text(metrics_text(rows), "utf-8")
    artifacts["txt"] = txt
    if figures:
        for path in render_figures(rows, out):
            artifacts[path.stem] = path
    return artifacts
