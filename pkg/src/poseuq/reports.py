"""Report rendering: JSON, aligned-column text tables, and summary figures.

All lengths are converted from meters to centimeters at this layer only.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _table(headers, rows) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines) + "\n"


def correlation_report_json(report) -> dict:
    return {
        "report": "correlation",
        "aggregation": "per-object rho, mean +/- std across objects",
        "rows": [asdict(r) for r in report.rows],
        "aggregates": [asdict(a) for a in report.aggregates],
        "warnings": list(report.warnings),
    }


def correlation_report_text(report) -> str:
    estimators = sorted({a.estimator_id for a in report.aggregates})
    methods = []
    for a in report.aggregates:
        if a.method not in methods:
            methods.append(a.method)
    agg = {(a.method, a.estimator_id): a for a in report.aggregates}
    rows = []
    for m in methods:
        cells = [m]
        for e in estimators:
            a = agg.get((m, e))
            cells.append(f"{a.mean_rho:.2f} +/- {a.std_rho:.2f}" if a else "-")
        rows.append(cells)
    out = ["Spearman correlation of UQ vs ADD error (mean +/- std across objects)",
           "", _table(["method"] + estimators, rows)]
    detail = [[r.object_id, r.estimator_id, r.method, f"{r.rho:.3f}", str(r.n_frames)]
              for r in report.rows]
    out += ["", "Per-object detail", "",
            _table(["object", "estimator", "method", "rho", "n_frames"], detail)]
    if report.warnings:
        out += ["", "Warnings:"] + [f"  {w}" for w in report.warnings]
    return "\n".join(out) + "\n"


def correlation_report_figure(report, path) -> None:
    estimators = sorted({a.estimator_id for a in report.aggregates})
    methods = []
    for a in report.aggregates:
        if a.method not in methods:
            methods.append(a.method)
    agg = {(a.method, a.estimator_id): a for a in report.aggregates}
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(methods), 4.0))
    x = np.arange(len(methods))
    width = 0.8 / max(len(estimators), 1)
    for i, e in enumerate(estimators):
        means = [agg[(m, e)].mean_rho if (m, e) in agg else np.nan for m in methods]
        stds = [agg[(m, e)].std_rho if (m, e) in agg else 0.0 for m in methods]
        ax.bar(x + (i - (len(estimators) - 1) / 2) * width, means, width,
               yerr=stds, capsize=3, label=e)
    ax.set_xticks(x)
    ax.set_xticklabels(methods, rotation=20, ha="right")
    ax.set_ylabel("Spearman rho")
    ax.set_title("UQ vs ADD-error rank correlation")
    ax.axhline(0.0, color="k", linewidth=0.6)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def selection_report_json(report) -> dict:
    return {
        "report": "view-selection",
        "aggregation": "per-object mean of per-sequence selected errors, "
                       "mean +/- std across objects",
        "rows": [asdict(r) for r in report.rows],
        "aggregates": [asdict(a) for a in report.aggregates],
        "warnings": list(report.warnings),
    }


def selection_report_text(report) -> str:
    estimators = sorted({a.estimator_id for a in report.aggregates})
    methods = []
    for a in report.aggregates:
        if a.method not in methods:
            methods.append(a.method)
    agg = {(a.method, a.estimator_id): a for a in report.aggregates}
    rows = []
    for m in methods:
        cells = [m]
        for e in estimators:
            a = agg.get((m, e))
            cells.append(f"{a.mean_error_m * 100:.1f} +/- {a.std_error_m * 100:.1f}"
                         if a else "-")
        rows.append(cells)
    out = ["ADD error of the selected frame (cm, mean +/- std across objects)",
           "", _table(["method"] + estimators, rows)]
    if report.warnings:
        out += ["", "Warnings:"] + [f"  {w}" for w in report.warnings]
    return "\n".join(out) + "\n"


def selection_report_figure(report, path) -> None:
    estimators = sorted({a.estimator_id for a in report.aggregates})
    methods = []
    for a in report.aggregates:
        if a.method not in methods:
            methods.append(a.method)
    agg = {(a.method, a.estimator_id): a for a in report.aggregates}
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(methods), 4.0))
    x = np.arange(len(methods))
    width = 0.8 / max(len(estimators), 1)
    for i, e in enumerate(estimators):
        means = [agg[(m, e)].mean_error_m * 100 if (m, e) in agg else np.nan for m in methods]
        ax.bar(x + (i - (len(estimators) - 1) / 2) * width, means, width, label=e)
    ax.set_xticks(x)
    ax.set_xticklabels(methods, rotation=20, ha="right")
    ax.set_ylabel("selected-frame ADD error (cm)")
    ax.set_title("Uncertainty-guided view selection")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_correlation_report(prefix, report) -> list:
    """Write <prefix>.json, <prefix>.txt and <prefix>.png; returns the paths."""
    paths = [f"{prefix}.json", f"{prefix}.txt", f"{prefix}.png"]
    _atomic_write(paths[0], json.dumps(correlation_report_json(report), indent=2) + "\n")
    _atomic_write(paths[1], correlation_report_text(report))
    correlation_report_figure(report, paths[2])
    return paths


def write_selection_report(prefix, report) -> list:
    paths = [f"{prefix}.json", f"{prefix}.txt", f"{prefix}.png"]
    _atomic_write(paths[0], json.dumps(selection_report_json(report), indent=2) + "\n")
    _atomic_write(paths[1], selection_report_text(report))
    selection_report_figure(report, paths[2])
    return paths
