"""Dataset construction: split meshes, render lattice silhouettes, voxelize."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .io import read_silhouette, read_vox, write_silhouette, write_vox
from .mesh import Mesh, MeshError, load_mesh
from .render import render_silhouette
from .views import ViewAngle, training_view_grid

log = logging.getLogger(__name__)


@dataclass
class ViewEntry:
    alpha: float
    beta: float
    silhouette: str

    @property
    def view(self) -> ViewAngle:
        return ViewAngle(self.alpha, self.beta)


@dataclass
class ModelEntry:
    model_id: str
    mesh: str
    split: str  # "train" | "test"
    voxels: str
    views: list[ViewEntry] = field(default_factory=list)


@dataclass
class DatasetManifest:
    category: str
    seed: int
    train_ratio: float
    render_resolution: int
    voxel_resolution: int
    n_polar: int
    n_azimuth: int
    silhouette_format: str
    models: list[ModelEntry] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    root: Path | None = None

    @property
    def warnings(self) -> int:
        return len(self.skipped)

    def split(self, tag: str) -> list[ModelEntry]:
        return [m for m in self.models if m.split == tag]

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("root")
        d["warnings"] = self.warnings
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        path = Path(path)
        d = json.loads(path.read_text())
        d.pop("warnings", None)
        models = [ModelEntry(**{**m, "views": [ViewEntry(**v) for v in m["views"]]}) for m in d.pop("models")]
        return cls(**d, models=models, root=path.parent)

    def resolve(self, relative: str) -> Path:
        return (self.root or Path(".")) / relative

    def load_mesh(self, model: ModelEntry) -> Mesh:
        return load_mesh(model.mesh)

    def load_voxels(self, model: ModelEntry):
        return read_vox(self.resolve(model.voxels))

    def load_silhouette(self, entry: ViewEntry):
        return read_silhouette(self.resolve(entry.silhouette))


def split_models(n: int, ratio: float, seed: int) -> np.ndarray:
    """Boolean train mask for n models, ``round(ratio * n)`` of them set."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[order[: int(round(ratio * n))]] = True
    return mask


def _build_one(job):
    mesh_path, out_dir, model_id, views, res, vres, fmt = job
    from .voxelize import voxelize

    mesh = load_mesh(mesh_path)
    model_dir = Path(out_dir) / model_id
    model_dir.mkdir(parents=True, exist_ok=True)
    vox_rel = f"{model_id}/voxels.vox"
    write_vox(voxelize(mesh, vres), Path(out_dir) / vox_rel)
    entries = []
    for i, view in enumerate(views):
        rel = f"{model_id}/view_{i:03d}.{fmt}"
        meta = {} if fmt == "pbm" else {"view": view, "model_id": model_id}
        write_silhouette(render_silhouette(mesh, view, res), Path(out_dir) / rel, **meta)
        entries.append(ViewEntry(view.alpha_deg, view.beta_deg, rel))
    return vox_rel, entries


def build_dataset(mesh_paths, out_dir, *, category: str = "objects", seed: int = 0,
                  train_ratio: float = 0.78, n_polar: int = 10, n_azimuth: int = 18,
                  resolution: int = 32, voxel_resolution: int | None = None,
                  silhouette_format: str = "pbm", workers: int | None = 1) -> DatasetManifest:
    """Normalize meshes, split them, render every lattice view and voxelize.

    Meshes that fail to load are skipped and listed in ``manifest.skipped``.
    Writes ``manifest.json`` into ``out_dir`` and returns the manifest.
    """
    if silhouette_format not in ("pbm", "bits"):
        raise ValueError(f"unknown silhouette format {silhouette_format!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vres = resolution if voxel_resolution is None else voxel_resolution
    paths = sorted(Path(p) for p in mesh_paths)
    if not paths:
        raise ValueError("no meshes given")

    good, skipped = [], []
    for p in paths:
        try:
            load_mesh(p)
        except MeshError as exc:
            log.warning("skipping %s: %s", p, exc)
            skipped.append({"path": str(p), "error": str(exc)})
        else:
            good.append(p)
    if not good:
        raise ValueError("none of the meshes could be read")

    train = split_models(len(good), train_ratio, seed)
    views = training_view_grid(n_polar, n_azimuth)
    ids = _unique_ids(good)
    jobs = [(str(p), str(out_dir), mid, views, resolution, vres, silhouette_format)
            for p, mid in zip(good, ids)]
    workers = workers or os.cpu_count() or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_build_one, jobs))
    else:
        results = [_build_one(j) for j in jobs]

    models = [
        ModelEntry(mid, str(p.resolve()), "train" if t else "test", vox, entries)
        for p, mid, t, (vox, entries) in zip(good, ids, train, results)
    ]
    manifest = DatasetManifest(category, seed, train_ratio, resolution, vres, n_polar, n_azimuth,
                               silhouette_format, models, skipped, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest


def _unique_ids(paths: list[Path]) -> list[str]:
    seen: dict[str, int] = {}
    ids = []
    for p in paths:
        stem = p.stem
        n = seen.get(stem, 0)
        seen[stem] = n + 1
        ids.append(stem if n == 0 else f"{stem}_{n}")
    return ids
