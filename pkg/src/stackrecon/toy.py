"""Two-shape overfit setup used by the acceptance checks and ``report --toy``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import IoURecord, evaluate_samples, network_predictor
from .geometry import box_mesh, icosphere, random_view_grid, render_silhouette, training_view_grid, voxelize
from .training import Sample, TrainConfig, TrainResult, fit, make_sample

TOY_SHAPES = ("cube", "sphere")


@dataclass
class ToyData:
    train: list[Sample]
    validation: list[Sample]
    heldout: list[Sample]


def toy_meshes() -> dict:
    return {"cube": box_mesh(), "sphere": icosphere(3)}


def toy_data(R: int = 16, n_train: int = 5, n_val: int = 1, n_heldout: int = 10, seed: int = 0) -> ToyData:
    """Silhouette/GT pairs for a cube and an icosphere.

    Training and validation views come from the lattice; held-out views from
    the randomly perturbed grid, so none of them was seen in training.
    """
    rng = np.random.default_rng(seed)
    lattice = training_view_grid()
    perturbed = random_view_grid(seed=seed + 1000)
    train, val, held = [], [], []
    for name, mesh in toy_meshes().items():
        gt = voxelize(mesh, R)
        picks = rng.choice(len(lattice), n_train + n_val, replace=False)
        for j, i in enumerate(picks):
            s = make_sample(render_silhouette(mesh, lattice[i], R), gt, R, name, lattice[i])
            (train if j < n_train else val).append(s)
        for i in rng.choice(len(perturbed), n_heldout, replace=False):
            held.append(make_sample(render_silhouette(mesh, perturbed[i], R), gt, R, name, perturbed[i]))
    return ToyData(train, val, held)


def toy_config(n_stages: int = 2, seed: int = 0, **overrides) -> TrainConfig:
    """Acceptance settings: R=16, w=1/4, default lambdas and etas."""
    base = dict(n_stages=n_stages, seed=seed, resolution=16, width_mult=0.25, max_steps=2000,
                val_every=50, dtype="float32")
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class ToyRun:
    result: TrainResult
    records: list[IoURecord]

    @property
    def mean_iou(self) -> float:
        return float(np.mean([r.iou for r in self.records]))


def toy_run(config: TrainConfig, data: ToyData, log_path=None) -> ToyRun:
    """Fit on the toy training views and score the selected parameters on held-out views."""
    result = fit(config, data.train, data.validation, log_path=log_path)
    network = "stacked" if config.n_stages > 1 else "single"
    records = evaluate_samples(network_predictor(result.best), data.heldout, network)
    return ToyRun(result, records)
