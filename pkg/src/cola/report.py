"""Evaluation/ablation report files: YAML, aligned text, CSV, and figures."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import yaml

from .metrics import EvaluationReport, MetricSet

_COLUMNS = ("s_alpha", "e_m", "f_beta", "mae")
_COLUMN_LABELS = {"s_alpha": "S", "e_m": "E", "f_beta": "F", "mae": "MAE"}


def _rows(report: EvaluationReport) -> list[tuple[str, MetricSet]]:
    rows = [(name, ms) for name, ms in report.conditions.items()]
    rows.append(("average", report.average))
    rows.append(("average_drop", report.average_drop))
    return rows


def format_table(report: EvaluationReport, title: str | None = None) -> str:
    """Fixed-width human-readable table of all conditions and rollups."""
    label_w = max(len(name) for name, _ in _rows(report)) + 2
    lines = []
    if title:
        lines.append(title)
    lines.append(f"split: {report.split}  samples: {report.n_samples}")
    lines.append("".join(["row".ljust(label_w)] + [c.rjust(10) for c in _COLUMNS]))
    for name, ms in _rows(report):
        vals = ms.as_dict()
        lines.append("".join([name.ljust(label_w)] + [f"{vals[c]:+.4f}".rjust(10) for c in _COLUMNS]))
    return "\n".join(lines) + "\n"


def write_report(report: EvaluationReport, out_dir: str | Path, stem: str = "report") -> dict[str, Path]:
    """Write <stem>.yaml / .txt / .csv plus a metrics figure; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "yaml": out_dir / f"{stem}.yaml",
        "txt": out_dir / f"{stem}.txt",
        "csv": out_dir / f"{stem}.csv",
        "png": out_dir / f"{stem}_metrics.png",
    }
    paths["yaml"].write_text(yaml.safe_dump(report.as_dict(), sort_keys=True))
    paths["txt"].write_text(format_table(report))
    with paths["csv"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", *_COLUMNS])
        for name, ms in _rows(report):
            writer.writerow([name] + [f"{ms.as_dict()[c]:.10g}" for c in _COLUMNS])
    render_metrics_figure(report, paths["png"])
    return paths


def render_metrics_figure(report: EvaluationReport, path: str | Path) -> None:
    rows = [(n, m) for n, m in _rows(report) if n != "average_drop"]
    x = np.arange(len(_COLUMNS))
    width = 0.8 / len(rows)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, (name, ms) in enumerate(rows):
        vals = [ms.as_dict()[c] for c in _COLUMNS]
        ax.bar(x + (i - (len(rows) - 1) / 2) * width, vals, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels([_COLUMN_LABELS[c] for c in _COLUMNS])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"{report.split}: metrics by availability condition")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def load_train_log(path: str | Path) -> dict[str, np.ndarray]:
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v))
    return {k: np.asarray(v) for k, v in cols.items()}


def render_loss_curve(log_path: str | Path, fig_path: str | Path) -> None:
    log = load_train_log(log_path)
    fig, ax = plt.subplots(figsize=(7, 4))
    step = np.arange(len(log["total"]))
    for key in ("bce", "iou", "total"):
        ax.plot(step, log[key], label=key, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(Path(log_path).stem)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# ablation rollups: one table over many named runs


def write_ablation(
    rows: list[tuple[str, dict[str, bool], EvaluationReport]],
    out_dir: str | Path,
    matrix: str,
) -> dict[str, Path]:
    """Combined comparison table for ablation rows (label, toggles, report)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "yaml": out_dir / "ablation.yaml",
        "txt": out_dir / "ablation.txt",
        "csv": out_dir / "ablation.csv",
        "png": out_dir / "ablation.png",
    }

    toggle_names = sorted({k for _, toggles, _ in rows for k in toggles})
    payload = {
        "matrix": matrix,
        "rows": [
            {"label": label, "toggles": dict(toggles), "report": rep.as_dict()}
            for label, toggles, rep in rows
        ],
    }
    paths["yaml"].write_text(yaml.safe_dump(payload, sort_keys=True))

    cond_names = list(rows[0][2].conditions) + ["average", "average_drop"]
    label_w = max(12, max(len(label) for label, _, _ in rows) + 2)
    col_w = 2 + max(len(f"{cond}:{c}") for cond in cond_names for c in _COLUMNS)
    lines = [f"matrix: {matrix}"]
    header = ["row".ljust(label_w)]
    header += [t.ljust(7) for t in toggle_names]
    for cond in cond_names:
        header += [f"{cond}:{c}".rjust(col_w) for c in _COLUMNS]
    lines.append("".join(header))
    for label, toggles, rep in rows:
        cells = [label.ljust(label_w)]
        cells += [("x" if toggles.get(t) else "-").ljust(7) for t in toggle_names]
        table = dict(rep.conditions)
        table["average"] = rep.average
        table["average_drop"] = rep.average_drop
        for cond in cond_names:
            vals = table[cond].as_dict()
            cells += [f"{vals[c]:+.4f}".rjust(col_w) for c in _COLUMNS]
        lines.append("".join(cells))
    paths["txt"].write_text("\n".join(lines) + "\n")

    with paths["csv"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["row", *toggle_names]
            + [f"{cond}_{c}" for cond in cond_names for c in _COLUMNS]
        )
        for label, toggles, rep in rows:
            table = dict(rep.conditions)
            table["average"] = rep.average
            table["average_drop"] = rep.average_drop
            writer.writerow(
                [label]
                + [int(bool(toggles.get(t))) for t in toggle_names]
                + [f"{table[cond].as_dict()[c]:.10g}" for cond in cond_names for c in _COLUMNS]
            )

    fig, ax = plt.subplots(figsize=(7, 0.6 * len(rows) + 2))
    labels = [label for label, _, _ in rows]
    avg_f = [rep.average.f_beta for _, _, rep in rows]
    ax.barh(np.arange(len(rows)), avg_f, color="tab:blue")
    ax.set_yticks(np.arange(len(rows)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("average F over conditions")
    ax.set_title(f"ablation: {matrix}")
    fig.tight_layout()
    fig.savefig(paths["png"], dpi=120)
    plt.close(fig)
    return paths
