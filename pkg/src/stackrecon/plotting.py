"""Figures for the report command, rendered off-screen to image files."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import ExperimentReport  # noqa: E402

LABELS = {"single": "S (single network)", "stacked": "SS (stacked networks)"}
COLORS = {"single": "tab:orange", "stacked": "tab:blue"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def _key(r) -> tuple:
    return (r.model_id, r.alpha, r.beta)


def plot_hard_view_ious(reports: Sequence[ExperimentReport], path: str | Path,
                        title: str | None = None) -> Path:
    """Per-image IoU on hard views, one line per network, images in a shared order."""
    fig, ax = plt.subplots(figsize=(8, 3.5))
    keys = sorted({_key(r) for rep in reports for r in rep.records if r.hard})
    index = {k: i for i, k in enumerate(keys)}
    for rep in reports:
        hard = sorted((r for r in rep.records if r.hard), key=_key)
        if not hard:
            continue
        x = [index[_key(r)] for r in hard]
        y = [r.iou for r in hard]
        ax.plot(x, y, ".-", lw=0.8, ms=3, color=COLORS.get(rep.network),
                label=f"{LABELS.get(rep.network, rep.network)}, mean {np.mean(y):.3f}")
    ax.set_xlabel("hard-view image")
    ax.set_ylabel("voxel IoU")
    ax.set_ylim(0, 1)
    ax.set_title(title or "Hard-view reconstructions")
    if keys:
        ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def plot_iou_histogram(reports: Sequence[ExperimentReport], path: str | Path, bins: int = 10) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    edges = np.linspace(0.0, 1.0, bins + 1)
    for rep in reports:
        values = [r.iou for r in rep.records]
        if values:
            ax.hist(values, bins=edges, alpha=0.5, color=COLORS.get(rep.network),
                    label=f"{LABELS.get(rep.network, rep.network)} ({rep.experiment})")
    ax.set_xlabel("voxel IoU")
    ax.set_ylabel("images")
    if reports:
        ax.legend(fontsize=8)
    return _save(fig, path)


def read_train_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_training_curve(rows: Sequence[dict], path: str | Path) -> Path:
    """Per-stage and combined loss by step, with validation scores where present."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = np.array([int(r["step"]) for r in rows])
    stage_cols = sorted(k for k in (rows[0] if rows else {}) if k.startswith("loss_stage"))
    for col in stage_cols:
        ax.plot(steps, [float(r[col]) for r in rows], lw=0.8, label=col.replace("loss_", ""))
    if rows:
        ax.plot(steps, [float(r["combined"]) for r in rows], "k", lw=1.0, label="combined")
        val = [(int(r["step"]), float(r["val_criterion"])) for r in rows if r.get("val_criterion") not in ("", None)]
        if val:
            vs, vv = zip(*val)
            ax.plot(vs, vv, "o", ms=3, color="tab:red", label="validation (final stage)")
        ax.legend(fontsize=8)
    ax.set_xlabel("step")
    ax.set_ylabel("root loss")
    return _save(fig, path)
