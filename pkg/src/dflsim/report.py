"""Render run records into PNG figures next to their metrics CSVs.

The CSVs stay the primary artifact; these plots are a convenience render of
the same columns: loss and consensus distance against steps, and loss
against the cumulative byte meter (the stand-in for a wall-clock axis).
"""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .harness import RunRecord, load_record, read_metrics  # noqa: E402


def _seed_curves(record: RunRecord, column: str):
    curves = []
    for outcome in record.outcomes:
        if outcome.diverged_at is not None:
            continue
        m = read_metrics(os.path.join(record.run_dir, outcome.metrics_file))
        curves.append((outcome.seed, m["step"], m[column], m["bytes"]))
    return curves


def render_record(record: RunRecord, out_dir: str | None = None) -> list[str]:
    """Loss/consensus/byte figures for a single record; returns written paths."""
    out_dir = out_dir or record.run_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []

    specs = [
        ("loss", "global loss", "loss_vs_step.png", False),
        ("consensus_dist", "consensus distance", "consensus_vs_step.png", True),
    ]
    for column, ylabel, fname, logy in specs:
        fig, ax = plt.subplots(figsize=(6, 4))
        curves = _seed_curves(record, column)
        for seed, steps, values, _ in curves:
            ax.plot(steps, values, alpha=0.35, linewidth=0.8, label=f"seed {seed}")
        if curves:
            stacked = np.vstack([v for _, _, v, _ in curves])
            ax.plot(curves[0][1], np.median(stacked, axis=0), "k-", linewidth=1.8, label="median")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel(ylabel)
        ax.set_title(record.label)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def render_comparison(records: list[RunRecord], out_dir: str) -> list[str]:
    """Overlay median loss curves across records, by step and by bytes."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for x_key, xlabel, fname in (
        ("step", "step", "compare_loss_vs_step.png"),
        ("bytes", "cumulative bytes", "compare_loss_vs_bytes.png"),
    ):
        fig, ax = plt.subplots(figsize=(6, 4))
        for record in records:
            curves = _seed_curves(record, "loss")
            if not curves:
                continue
            stacked = np.vstack([v for _, _, v, _ in curves])
            xs = curves[0][1] if x_key == "step" else curves[0][3]
            ax.plot(xs, np.median(stacked, axis=0), linewidth=1.4, label=record.label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("global loss (median over seeds)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def render_directory(path: str) -> list[str]:
    """Render whatever lives under path: one record, or a directory of records."""
    if os.path.exists(os.path.join(path, "record.json")):
        return render_record(load_record(path))
    records = []
    for entry in sorted(os.listdir(path)):
        sub = os.path.join(path, entry)
        if os.path.isdir(sub) and os.path.exists(os.path.join(sub, "record.json")):
            records.append(load_record(sub))
    written = []
    for record in records:
        written.extend(render_record(record))
    if len(records) > 1:
        written.extend(render_comparison(records, path))
    return written
