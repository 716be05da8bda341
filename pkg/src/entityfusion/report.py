"""Experiment reports: a key/value text format, a comparison table and a bar chart.

Report file layout (one ``key = value`` per line)::

    # entityfusion report v1
    task = los_gt3
    [row]
    model = proposed
    embedding = word2vec
    seeds = 1 2 3
    auroc = 0.8389 0.8357 0.8476
    auprc = ...
    f1 = ...

Metric lines hold one value per seed, written with ``repr`` so a file read
back reproduces the floats exactly.  AUPRC is average precision; the ``±``
in the rendered table is the population standard deviation over seeds.
"""

from __future__ import annotations

import os
from typing import Iterable, Sequence

import numpy as np

from .data import TASK_TITLES, resolve_task
from .metrics import METRICS
from .models import ModelKind
from .training import MetricsReport

REPORT_VERSION = "# entityfusion report v1"
COLUMNS = {"auroc": "AUROC", "auprc": "AUPRC", "f1": "F1"}
BEST_MARK = "*"
_STAMPS = {
    ".png": {"Software": None},
    ".svg": {"Creator": None, "Date": None},
    ".pdf": {"Creator": None, "Producer": None, "CreationDate": None},
}


class ReportError(ValueError):
    """Malformed report text; the message names the offending line."""


def format_report(reports: Sequence[MetricsReport]) -> str:
    if not reports:
        raise ValueError("nothing to report")
    task = reports[0].task
    if any(r.task != task for r in reports):
        raise ValueError("all rows of one report must share a task")
    out = [REPORT_VERSION, f"task = {task}"]
    for r in reports:
        out += ["[row]", f"model = {r.model}", f"embedding = {r.embedding}",
                "seeds = " + " ".join(str(s) for s in r.seeds)]
        for m in METRICS:
            out.append(f"{m} = " + " ".join(repr(float(v)) for v in r.values[m]))
    return "\n".join(out) + "\n"


def _split_kv(line: str, lineno: int) -> tuple[str, str]:
    if "=" not in line:
        raise ReportError(f"line {lineno}: expected 'key = value', got {line!r}")
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


def _finish(row: dict, task: str, lineno: int) -> MetricsReport:
    missing = [k for k in ("model", "embedding", "seeds", *METRICS) if k not in row]
    if missing:
        raise ReportError(f"line {lineno}: row is missing {', '.join(missing)}")
    seeds = row["seeds"]
    for m in METRICS:
        if len(row[m]) != len(seeds):
            raise ReportError(f"line {lineno}: {m} has {len(row[m])} values for {len(seeds)} seeds")
    return MetricsReport(task, row["model"], row["embedding"], seeds, {m: row[m] for m in METRICS})


def parse_report(text: str) -> list[MetricsReport]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != REPORT_VERSION:
        raise ReportError(f"line 1: expected {REPORT_VERSION!r}")
    task = None
    rows: list[MetricsReport] = []
    row = None
    row_start = 0
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[row]":
            if task is None:
                raise ReportError(f"line {lineno}: row before the task line")
            if row is not None:
                rows.append(_finish(row, task, row_start))
            row, row_start = {}, lineno
            continue
        key, value = _split_kv(line, lineno)
        if row is None:
            if key != "task":
                raise ReportError(f"line {lineno}: unexpected key {key!r} before the first row")
            try:
                task = resolve_task(value)
            except ValueError as exc:
                raise ReportError(f"line {lineno}: {exc}") from None
            continue
        if key in row:
            raise ReportError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key == "model":
                row[key] = ModelKind.parse(value).value
            elif key == "embedding":
                row[key] = value
            elif key == "seeds":
                row[key] = [int(s) for s in value.split()]
            elif key in METRICS:
                row[key] = [float(s) for s in value.split()]
            else:
                raise ReportError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ReportError):
                raise
            raise ReportError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    if row is None:
        raise ReportError(f"line {len(lines)}: report has no rows")
    rows.append(_finish(row, task, row_start))
    return rows


def read_report(path) -> list[MetricsReport]:
    with open(path, encoding="utf-8") as fh:
        try:
            return parse_report(fh.read())
        except ReportError as exc:
            raise ReportError(f"{path}: {exc}") from None


def write_report(reports: Sequence[MetricsReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report(reports))


def cell(report: MetricsReport, metric: str) -> str:
    """``mean`` scaled to percent, ``std`` left on the 0-1 scale."""
    return f"{100.0 * report.mean(metric):.2f} ± {report.std(metric):.3f}"


def _best(reports: Sequence[MetricsReport], metric: str) -> set[int]:
    means = [round(r.mean(metric), 12) for r in reports]
    top = max(means)
    return {i for i, m in enumerate(means) if m == top}


def render_table(reports: Iterable[MetricsReport]) -> str:
    """Plain-text comparison table; the best mean per task and metric is starred."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to render")
    header = ["Task", "Model", "Embedding", *COLUMNS.values()]
    body = []
    tasks = list(dict.fromkeys(r.task for r in reports))
    for task in tasks:
        group = [r for r in reports if r.task == task]
        best = {m: _best(group, m) for m in COLUMNS}
        for i, r in enumerate(group):
            cells = [cell(r, m) + (" " + BEST_MARK if i in best[m] else "") for m in COLUMNS]
            body.append([TASK_TITLES[task], ModelKind(r.model).title, r.embedding, *cells])
    widths = [max(len(row[j]) for row in [header] + body) for j in range(len(header))]

    def line(row):
        return "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()

    seeds = sorted({len(r.seeds) for r in reports})
    out = [line(header), line(["-" * w for w in widths])] + [line(r) for r in body]
    out.append("")
    out.append(f"cells: mean x 100 ± population std over seeds (n = {', '.join(map(str, seeds))}); "
               f"AUPRC is average precision; {BEST_MARK} marks the best mean per task")
    return "\n".join(out) + "\n"


def render_figure(reports: Sequence[MetricsReport], path) -> None:
    """Grouped bars of mean AUROC/AUPRC/F1 per row with std error bars."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    reports = list(reports)
    labels = [ModelKind(r.model).title + ("" if r.embedding == "-" else f"\n{r.embedding}") for r in reports]
    x = np.arange(len(reports))
    width = 0.8 / len(COLUMNS)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(reports)), 3.2))
    for j, (m, title) in enumerate(COLUMNS.items()):
        ax.bar(x + (j - 1) * width, [r.mean(m) for r in reports], width,
               yerr=[r.std(m) for r in reports], capsize=2, label=title)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("score")
    tasks = list(dict.fromkeys(TASK_TITLES[r.task] for r in reports))
    ax.set_title(", ".join(tasks), fontsize=10)
    ax.legend(fontsize=7, frameon=False, ncol=len(COLUMNS))
    fig.tight_layout()
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in _STAMPS:
        plt.close(fig)
        raise ValueError(f"figure format {ext or '(none)'} not supported; use one of {sorted(_STAMPS)}")
    # drop version and date stamps, and fix svg element ids, so reruns give identical bytes
    with matplotlib.rc_context({"svg.hashsalt": "entityfusion"}):
        fig.savefig(path, metadata=_STAMPS[ext])
    plt.close(fig)
