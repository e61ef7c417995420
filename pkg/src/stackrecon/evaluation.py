"""Voxel IoU, the two view protocols, and comparison-table reporting."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry.dataset import DatasetManifest
from .geometry.grids import VoxelGrid
from .geometry.render import render_silhouette
from .geometry.views import DEFAULT_HARD_THRESHOLD_DEG, ViewAngle, is_hard_view, random_view_grid
from .network import StackedParams, stacked_forward
from .tensor import Tensor, no_grad
from .training import Sample, make_sample

TABLE_COLUMNS = ("S-Hard-E1", "S-All-E1", "SS-Hard-E1", "SS-All-E1", "S-All-E2", "SS-All-E2")
REFERENCE_BASELINE = "3D-R2N2"

# Average IoU as published, for side-by-side display only.
PUBLISHED_TABLE = {
    "Cars": {"3D-R2N2": 0.798, "S-Hard-E1": 0.699, "S-All-E1": 0.765, "SS-Hard-E1": 0.817,
             "SS-All-E1": 0.828, "S-All-E2": 0.601, "SS-All-E2": 0.686},
    "Planes": {"3D-R2N2": 0.513, "S-Hard-E1": 0.373, "S-All-E1": 0.469, "SS-Hard-E1": 0.473,
               "SS-All-E1": 0.474, "S-All-E2": 0.384, "SS-All-E2": 0.430},
}


def _values(v) -> np.ndarray:
    return np.asarray(v.values if isinstance(v, VoxelGrid) else v)


def binarize(v, threshold: float = 0.5) -> VoxelGrid:
    """1 where the value is strictly above ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return VoxelGrid((_values(v) > threshold).astype(np.uint8))


def voxel_iou(a, b) -> float:
    """|a & b| / |a | b| for binary grids; two empty grids score 1."""
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise ValueError(f"resolution mismatch: {a.shape} vs {b.shape}")
    for g in (a, b):
        if not np.isin(g, (0, 1)).all():
            raise ValueError("voxel_iou needs binary grids; binarize first")
    a, b = a.astype(bool), b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def standard_error(values: Sequence[float]) -> float:
    """Sample standard deviation over sqrt(n); 0 for fewer than two values."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(v.std(ddof=1) / math.sqrt(v.size))


@dataclass
class IoURecord:
    model_id: str
    alpha: float
    beta: float
    hard: bool
    iou: float
    network: str  # "single" | "stacked"

    def __post_init__(self):
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"IoU {self.iou} outside [0, 1]")


@dataclass
class ExperimentReport:
    experiment: str  # "E1" | "E2"
    category: str
    network: str
    records: list[IoURecord] = field(default_factory=list)
    config_hash: str = ""
    seed: int | None = None

    def _subset(self, which: str) -> list[float]:
        if which == "hard":
            return [r.iou for r in self.records if r.hard]
        if which == "easy":
            return [r.iou for r in self.records if not r.hard]
        return [r.iou for r in self.records]

    def mean(self, which: str = "all") -> float | None:
        v = self._subset(which)
        return float(np.mean(v)) if v else None

    def stderr(self, which: str = "all") -> float | None:
        v = self._subset(which)
        return standard_error(v) if v else None

    def count(self, which: str = "all") -> int:
        return len(self._subset(which))

    def histogram(self, bins: int = 10) -> dict:
        counts, edges = np.histogram([r.iou for r in self.records], bins=bins, range=(0.0, 1.0))
        return {"edges": edges.round(6).tolist(), "counts": counts.tolist()}

    def aggregates(self) -> dict:
        return {
            which: {"mean": self.mean(which), "stderr": self.stderr(which), "count": self.count(which)}
            for which in ("all", "hard", "easy")
        }

    def to_json(self) -> str:
        d = {
            "experiment": self.experiment, "category": self.category, "network": self.network,
            "config_hash": self.config_hash, "seed": self.seed,
            "aggregates": self.aggregates(), "histogram": self.histogram(),
            "records": [asdict(r) for r in self.records],
        }
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ExperimentReport:
        d = json.loads(text)
        return cls(d["experiment"], d["category"], d["network"],
                   [IoURecord(**r) for r in d["records"]], d.get("config_hash", ""), d.get("seed"))

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model_id", "alpha", "beta", "hard", "network", "iou"])
        for r in self.records:
            w.writerow([r.model_id, repr(r.alpha), repr(r.beta), int(r.hard), r.network, repr(r.iou)])
        return buf.getvalue()


Predictor = Callable[[Sequence[Sample]], np.ndarray]


def network_predictor(params: StackedParams, batch_size: int = 8) -> Predictor:
    """Final-stage occupancy probabilities, shape [N, R, R, R]."""
    dtype = params.parameters()[0].dtype

    def predict(samples: Sequence[Sample]) -> np.ndarray:
        outs = []
        with no_grad():
            for i in range(0, len(samples), batch_size):
                chunk = samples[i:i + batch_size]
                x = Tensor(np.stack([s.x for s in chunk]), dtype=dtype)
                outs.append(stacked_forward(params, x)[-1].data[:, 0])
        return np.concatenate(outs)

    return predict


def evaluate_samples(predict: Predictor, samples: Sequence[Sample], network: str,
                     hard_threshold_deg: float = DEFAULT_HARD_THRESHOLD_DEG,
                     threshold: float = 0.5) -> list[IoURecord]:
    preds = predict(samples)
    records = []
    for s, y in zip(samples, preds):
        iou = voxel_iou(binarize(y, threshold), binarize(s.gt[0], threshold))
        view = ViewAngle(*s.view)
        records.append(IoURecord(s.model_id, view.alpha_deg, view.beta_deg,
                                 is_hard_view(view, hard_threshold_deg), iou, network))
    return records


def experiment_samples(manifest: DatasetManifest, mode: str, seed: int, R: int,
                       split: str = "test") -> list[Sample]:
    """(silhouette, GT) pairs for every model in ``split`` under protocol ``mode``.

    E1 reuses the rendered lattice views; E2 renders the randomly perturbed
    views from the meshes.
    """
    if mode not in ("E1", "E2"):
        raise ValueError(f"mode must be E1 or E2, got {mode!r}")
    models = manifest.split(split)
    if not models:
        raise ValueError(f"manifest has no {split} models")
    samples = []
    for model in models:
        gt = manifest.load_voxels(model)
        if mode == "E1":
            for entry in model.views:
                samples.append(make_sample(manifest.load_silhouette(entry), gt, R, model.model_id, entry.view))
        else:
            mesh = manifest.load_mesh(model)
            for view in random_view_grid(manifest.n_polar, manifest.n_azimuth, seed):
                sil = render_silhouette(mesh, view, manifest.render_resolution)
                samples.append(make_sample(sil, gt, R, model.model_id, view))
    return samples


def run_experiment(params: StackedParams | None, manifest: DatasetManifest, mode: str, seed: int = 0, *,
                   predictor: Predictor | None = None, network: str | None = None,
                   hard_threshold_deg: float = DEFAULT_HARD_THRESHOLD_DEG, threshold: float = 0.5,
                   resample: bool = False, config_hash: str = "", split: str = "test") -> ExperimentReport:
    """Reconstruct every (test model, view) pair and score it against ground truth."""
    if params is None and predictor is None:
        raise ValueError("need either parameters or a predictor")
    R = params.spec.resolution if params is not None else manifest.voxel_resolution
    if manifest.voxel_resolution != R and not resample:
        raise ValueError(f"resolution mismatch: checkpoint R={R}, manifest R={manifest.voxel_resolution}")
    if network is None:
        network = "stacked" if params is not None and params.n_stages > 1 else "single"
    predict = predictor or network_predictor(params)
    samples = experiment_samples(manifest, mode, seed, R, split)
    records = evaluate_samples(predict, samples, network, hard_threshold_deg, threshold)
    return ExperimentReport(mode, manifest.category, network, records, config_hash,
                            seed if mode == "E2" else None)


# -- reporting ---------------------------------------------------------------


def table_cells(reports: Sequence[ExperimentReport]) -> dict[str, dict[str, tuple[float, float, int]]]:
    """category -> column -> (mean, stderr, count)."""
    cells: dict[str, dict[str, tuple[float, float, int]]] = {}
    for rep in reports:
        net = "SS" if rep.network == "stacked" else "S"
        for subset in ("Hard", "All"):
            col = f"{net}-{subset}-{rep.experiment}"
            if col not in TABLE_COLUMNS:
                continue
            which = subset.lower()
            if rep.count(which):
                cells.setdefault(rep.category, {})[col] = (rep.mean(which), rep.stderr(which), rep.count(which))
    return cells


def report_table(reports: Sequence[ExperimentReport], reference: bool = False) -> tuple[str, str]:
    """Markdown table and long-form CSV of measured (and optionally published) values.

    Missing cells stay blank.  Published rows are labelled as such.
    """
    header = ["Category", "Source", REFERENCE_BASELINE, *TABLE_COLUMNS]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "source", "column", "mean", "stderr", "count"])

    for category, cells in table_cells(reports).items():
        row = [category, "measured", ""]
        for col in TABLE_COLUMNS:
            if col in cells:
                m, se, n = cells[col]
                row.append(f"{m:.3f} ± {se:.3f}")
                w.writerow([category, "measured", col, repr(m), repr(se), n])
            else:
                row.append("")
        lines.append("| " + " | ".join(row) + " |")
    if reference:
        for category, values in PUBLISHED_TABLE.items():
            row = [category, "published (not reproduced)"]
            for col in (REFERENCE_BASELINE, *TABLE_COLUMNS):
                row.append(f"{values[col]:.3f}")
                w.writerow([category, "published", col, values[col], "", ""])
            lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n", buf.getvalue()
