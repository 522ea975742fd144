"""Result tables and prediction scatter plots.

The comparison table mirrors the experiment protocol: one row per
(network, augmentation) run, grouped into blocks by augmentation recipe in
first-appearance order, with the best value per metric column marked. The
single-run metrics table round-trips through ``parse_metrics_table`` at six
significant digits.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .manifest import Manifest
from .metrics import LEVELS, MetricsReport, PredictionSet, aggregate

_DISEASE_STYLE = {
    "None": ("tab:blue", "o", "healthy"),
    "TTN": ("tab:red", "o", "TTN"),
    "RDS": ("black", "s", "RDS"),
}


class ReportError(ValueError):
    pass


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def render_metrics_table(report: MetricsReport) -> str:
    """Aligned per-level table for one run; parseable back via parse_metrics_table."""
    metrics = report.metric_names
    headers = ["level", *metrics, "count"]
    rows = []
    for level in LEVELS:
        if level not in report.values:
            continue
        rows.append(
            [level]
            + [_fmt(report.values[level][m]) for m in metrics]
            + [str(report.counts[level])]
        )
    if not rows:
        raise ReportError("report has no levels to render")
    widths = [max(len(r[i]) for r in [headers, *rows]) for i in range(len(headers))]
    lines = [f"task: {report.task}"]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"


def parse_metrics_table(text: str) -> MetricsReport:
    lines = [ln.rstrip() for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) < 3 or not lines[0].startswith("task: "):
        raise ReportError("not a metrics table")
    task = lines[0].split(": ", 1)[1].strip()
    headers = lines[1].split()
    metrics = headers[1:-1]
    values: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    for line in lines[2:]:
        cells = line.split()
        if len(cells) != len(headers):
            raise ReportError(f"malformed row: {line!r}")
        level = cells[0]
        values[level] = {m: float(v) for m, v in zip(metrics, cells[1:-1])}
        counts[level] = int(cells[-1])
    return MetricsReport(task=task, values=values, counts=counts)


def render_comparison_table(
    reports: Sequence[MetricsReport],
    labels: Sequence[tuple[str, str]],
) -> str:
    """Rows per (network, augmentation) with best-per-column highlighting.

    Reports must share one task; rows group into blocks by augmentation in
    first-appearance order. Best correlations/accuracies are the column
    maxima, best MAPEs the minima, marked with '*'.
    """
    if not reports:
        raise ReportError("no reports to render")
    if len(reports) != len(labels):
        raise ReportError("need one (network, augmentation) label per report")
    tasks = {r.task for r in reports}
    if len(tasks) != 1:
        raise ReportError(f"cannot mix regression and classification reports: {sorted(tasks)}")
    task = tasks.pop()
    metrics = reports[0].metric_names
    levels = [lvl for lvl in LEVELS if all(lvl in r.values for r in reports)]
    if not levels:
        raise ReportError("reports share no levels")

    columns = [(m, lvl) for m in metrics for lvl in levels]
    table = np.array([[r.values[lvl][m] for (m, lvl) in columns] for r in reports])
    best = {
        j: (table[:, j].min() if m == "mape" else table[:, j].max())
        for j, (m, _) in enumerate(columns)
    }

    header1 = ["Network", "Augmentation"] + [m for (m, _) in columns]
    header2 = ["", ""] + [lvl for (_, lvl) in columns]
    body = []
    for i, (network, augmentation) in enumerate(labels):
        cells = [network, augmentation]
        for j in range(len(columns)):
            mark = "*" if table[i, j] == best[j] else " "
            cells.append(f"{_fmt(table[i, j])}{mark}")
        body.append(cells)

    aug_order: list[str] = []
    for _, augmentation in labels:
        if augmentation not in aug_order:
            aug_order.append(augmentation)

    widths = [
        max(len(row[i]) for row in [header1, header2, *body]) for i in range(len(header1))
    ]

    def fmt_row(cells: Sequence[str]) -> str:
        return "  ".join(c.ljust(widths[i]) for i, c in enumerate(cells)).rstrip()

    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    lines = [f"task: {task}", fmt_row(header1), fmt_row(header2), rule]
    for block_aug in aug_order:
        for row, (_, augmentation) in zip(body, labels):
            if augmentation == block_aug:
                lines.append(fmt_row(row))
        lines.append(rule)
    return "\n".join(lines) + "\n"


def plot_predictions(
    pset: PredictionSet,
    out_path: Union[str, Path],
    manifest: Optional[Manifest] = None,
    task: str = "classification",
    sf_clip: float = 450.0,
    sf_norm: float = 450.0,
) -> Path:
    """Session-level scatter of predicted score against the SF marker.

    Markers distinguish healthy / TTN / RDS when a manifest is supplied
    (falling back to the class target otherwise). Regression scores are
    de-normalized and displayed clipped to sf_clip, like the training
    targets. A data sidecar CSV lands next to the image.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sessions = pset if pset.level == "session" else aggregate(pset, "session")

    def disease_of(entry) -> str:
        if manifest is not None and entry.patient_id in manifest.patients:
            return manifest.patients[entry.patient_id].disease.value
        if entry.target_class is None:
            return "None"
        return "RDS" if entry.target_class == 1 else "None"

    xs: dict[str, list[float]] = {d: [] for d in _DISEASE_STYLE}
    ys: dict[str, list[float]] = {d: [] for d in _DISEASE_STYLE}
    rows = []
    for entry in sessions.entries:
        disease = disease_of(entry)
        target = min(entry.target_sf, sf_clip)
        if task == "regression":
            predicted = min(max(entry.score, 0.0) * sf_norm, sf_clip)
        else:
            predicted = 1.0 - entry.score  # healthy confidence
        xs[disease].append(target)
        ys[disease].append(predicted)
        rows.append((entry.session_id, target, predicted, disease))

    fig, ax = plt.subplots(figsize=(6, 5))
    for disease, (color, marker, label) in _DISEASE_STYLE.items():
        if xs[disease]:
            ax.scatter(xs[disease], ys[disease], c=color, marker=marker, label=label, alpha=0.8)
    ax.set_xlabel("SF (reference)")
    ax.set_ylabel("predicted SF" if task == "regression" else "healthy confidence")
    ax.set_title("session-level predictions")
    ax.legend()
    ax.grid(True, alpha=0.3)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)

    sidecar = out_path.with_suffix(out_path.suffix + ".csv")
    with sidecar.open("w", encoding="utf-8") as fh:
        fh.write("session_id,target_sf,predicted,disease\n")
        for session_id, target, predicted, disease in rows:
            fh.write(f"{session_id},{target!r},{predicted!r},{disease}\n")
    return out_path
