"""End-to-end training of the stacked network.

Every stage is supervised against its own mixed target
``eta1 * X + eta2 * GT`` and the per-stage root losses are combined with
weights ``lambda_k``; that weighted sum drives the parameter updates.  Model
selection looks only at the final stage's error on held-out views.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import config_hash, save_checkpoint
from .geometry.dataset import DatasetManifest
from .geometry.grids import SilhouetteImage, VoxelGrid
from .network import NetworkSpec, StackedParams, init_params, replicate, stacked_forward
from .tensor import NonFiniteError, Tensor, add, backward, mul_scalar, no_grad, root_abs_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


OPTIMIZERS = ("sgd_momentum", "adam")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def default_etas(n_stages: int) -> tuple[tuple[float, float], ...]:
    return tuple([(0.5, 0.5)] * (n_stages - 1) + [(0.0, 1.0)])


@dataclass
class TrainConfig:
    n_stages: int = 2
    lambdas: tuple[float, ...] | None = None
    etas: tuple[tuple[float, float], ...] | None = None
    eps: float = 1e-4
    lr: float = 1e-2
    momentum: float = 0.9
    optimizer: str = "sgd_momentum"
    batch_size: int = 4
    max_steps: int = 2000
    val_every: int = 50
    plateau_patience: int = 5
    lr_decay: float = 0.1
    val_fraction: float = 0.1
    seed: int = 0
    width_mult: float = 1.0
    resolution: int = 32
    share_weights: bool = False
    activation: str = "leaky_relu"
    dtype: str = "float64"

    def __post_init__(self):
        n = self.n_stages
        if n < 1:
            raise ValueError("n_stages must be at least 1")
        if self.lambdas is None:
            self.lambdas = tuple([1.0 / n] * n)
        if self.etas is None:
            self.etas = default_etas(n)
        self.lambdas = tuple(float(v) for v in self.lambdas)
        self.etas = tuple((float(a), float(b)) for a, b in self.etas)
        if len(self.lambdas) != n or len(self.etas) != n:
            raise ValueError(f"need {n} lambdas and {n} eta pairs")
        check_lambdas(self.lambdas)
        for a, b in self.etas:
            if a < 0 or b < 0 or abs(a + b - 1.0) > 1e-9:
                raise ValueError(f"eta pair {(a, b)} must be non-negative and sum to 1")
        if self.etas[-1] != (0.0, 1.0):
            raise ValueError("final stage must be supervised by the ground truth alone (eta = (0, 1))")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def spec(self) -> NetworkSpec:
        return NetworkSpec(resolution=self.resolution, width_mult=self.width_mult, activation=self.activation)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        d["etas"] = [list(e) for e in self.etas]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if d.get("lambdas") is not None:
            d["lambdas"] = tuple(d["lambdas"])
        if d.get("etas") is not None:
            d["etas"] = tuple(tuple(e) for e in d["etas"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def check_lambdas(lambdas: Sequence[float]) -> None:
    if any(v < 0 for v in lambdas) or abs(sum(lambdas) - 1.0) > 1e-9:
        raise ValueError(f"lambdas must be non-negative and sum to 1, got {tuple(lambdas)}")


# -- samples ----------------------------------------------------------------


@dataclass
class Sample:
    """One (replicated silhouette, ground truth) pair as [1, R, R, R] arrays."""

    x: np.ndarray
    gt: np.ndarray
    model_id: str = ""
    view: tuple[float, float] | None = None


def make_sample(silhouette: SilhouetteImage, gt: VoxelGrid, R: int, model_id: str = "",
                view=None) -> Sample:
    x = replicate(silhouette, R).values.astype(np.float64)[None]
    g = gt.resized(R).values.astype(np.float64)[None]
    v = None if view is None else (view.alpha_deg, view.beta_deg)
    return Sample(x, g, model_id, v)


def _stack(samples: Sequence[Sample], attr: str, dtype) -> Tensor:
    return Tensor(np.stack([getattr(s, attr) for s in samples]), dtype=dtype)


# -- losses -----------------------------------------------------------------


def stage_target(k: int, x_rep, gt, config: TrainConfig) -> Tensor:
    """Mixed supervision for stage ``k`` (1-based): eta1 * X + eta2 * GT."""
    x = x_rep.data if isinstance(x_rep, Tensor) else np.asarray(getattr(x_rep, "values", x_rep))
    g = gt.data if isinstance(gt, Tensor) else np.asarray(getattr(gt, "values", gt))
    if x.shape != g.shape:
        raise ValueError(f"stage_target shape mismatch: {x.shape} vs {g.shape}")
    e1, e2 = config.etas[k - 1]
    return Tensor(e1 * x + e2 * g, dtype=np.result_type(x.dtype, g.dtype, np.float32))


def combined_loss(outputs: Sequence[Tensor], targets: Sequence[Tensor], lambdas: Sequence[float],
                  eps: float = 1e-4) -> tuple[Tensor, list[float]]:
    """Sum of lambda_k * root_abs_loss(Y_k, target_k); also returns each stage's loss."""
    if len(outputs) != len(targets) or len(outputs) != len(lambdas):
        raise ValueError("outputs, targets and lambdas must have equal counts")
    check_lambdas(lambdas)
    total, per_stage = None, []
    for y, t, lam in zip(outputs, targets, lambdas):
        loss = root_abs_loss(y, t, eps)
        per_stage.append(loss.item())
        term = mul_scalar(loss, lam)
        total = term if total is None else add(total, term)
    return total, per_stage


def final_stage_criterion(params: StackedParams, samples: Sequence[Sample], eps: float = 1e-4,
                          batch_size: int = 8) -> float:
    """Mean final-stage root error against the ground truth; nothing else."""
    dtype = params.parameters()[0].dtype
    total = 0.0
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            y = stacked_forward(params, _stack(chunk, "x", dtype))[-1]
            r = np.abs(y.data - np.stack([s.gt for s in chunk]))
            per = (np.sqrt(r + eps) - np.sqrt(eps)).reshape(len(chunk), -1).mean(axis=1)
            total += float(per.sum())
    return total / len(samples)


def select_best(candidates: Sequence[StackedParams], validation: Sequence[Sample],
                eps: float = 1e-4) -> tuple[int, float]:
    """Index and score of the candidate with the lowest final-stage error."""
    if not validation:
        raise ValueError("validation set is empty")
    scores = [final_stage_criterion(c, validation, eps) for c in candidates]
    best = int(np.argmin(scores))
    return best, scores[best]


# -- optimisation -----------------------------------------------------------


@dataclass
class StepMetrics:
    step: int
    stage_losses: list[float]
    combined: float
    lr: float


@dataclass
class TrainState:
    params: StackedParams
    velocity: dict[int, np.ndarray] = field(default_factory=dict)
    second_moment: dict[int, np.ndarray] = field(default_factory=dict)
    step: int = 0
    lr: float = 1e-2
    history: list[StepMetrics] = field(default_factory=list)
    best_score: float = float("inf")
    best_step: int = -1
    best_params: StackedParams | None = None
    stale_validations: int = 0


def new_state(config: TrainConfig, params: StackedParams | None = None) -> TrainState:
    if params is None:
        params = init_params(config.spec(), config.n_stages, config.seed, config.share_weights,
                             dtype=np.dtype(config.dtype))
    return TrainState(params, lr=config.lr)


def train_step(state: TrainState, batch: Sequence[Sample], config: TrainConfig) -> tuple[TrainState, StepMetrics]:
    """Forward, combined loss, backward and one momentum-SGD update (in place)."""
    if not batch:
        raise ValueError("empty batch")
    params = state.params
    dtype = params.parameters()[0].dtype
    x = _stack(batch, "x", dtype)
    gt = _stack(batch, "gt", dtype)
    try:
        outputs = stacked_forward(params, x)
        targets = [stage_target(k, x, gt, config) for k in range(1, len(outputs) + 1)]
        loss, per_stage = combined_loss(outputs, targets, config.lambdas, config.eps)
        params.zero_grad()
        backward(loss)
    except NonFiniteError as exc:
        raise TrainingError(f"non-finite values at step {state.step + 1}: {exc}") from exc
    combined = loss.item()
    if not np.isfinite(combined):
        raise TrainingError(f"non-finite loss at step {state.step + 1}")

    apply_update(state, config)
    state.step += 1
    metrics = StepMetrics(state.step, per_stage, combined, state.lr)
    state.history.append(metrics)
    return state, metrics


def apply_update(state: TrainState, config: TrainConfig) -> None:
    """Momentum-SGD (v = mu * v + g; p -= lr * v) or Adam, in place."""
    t = state.step + 1
    for p in state.params.parameters():
        if p.grad is None:
            continue
        key = id(p)
        if config.optimizer == "adam":
            b1, b2 = ADAM_BETAS
            m = b1 * state.velocity.get(key, 0.0) + (1 - b1) * p.grad
            v = b2 * state.second_moment.get(key, 0.0) + (1 - b2) * p.grad ** 2
            state.velocity[key], state.second_moment[key] = m, v
            step = (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + ADAM_EPS)
        else:
            v = state.velocity.get(key)
            step = p.grad if v is None else config.momentum * v + p.grad
            state.velocity[key] = step
        p.data = p.data - state.lr * step


def _snapshot(params: StackedParams) -> StackedParams:
    clone = copy.deepcopy(params)
    clone.zero_grad()
    return clone


def validate(state: TrainState, validation: Sequence[Sample], config: TrainConfig) -> float:
    """Score the current parameters; keep them if they beat the best so far."""
    score = final_stage_criterion(state.params, validation, config.eps)
    if score < state.best_score:
        state.best_score, state.best_step = score, state.step
        state.best_params = _snapshot(state.params)
        state.stale_validations = 0
    else:
        state.stale_validations += 1
        if state.stale_validations >= config.plateau_patience:
            state.lr *= config.lr_decay
            state.stale_validations = 0
            log.info("step %d: validation plateau, lr -> %g", state.step, state.lr)
    return score


@dataclass
class TrainResult:
    state: TrainState
    log_rows: list[dict]

    @property
    def best(self) -> StackedParams:
        return self.state.best_params or self.state.params


def fit(config: TrainConfig, train_samples: Sequence[Sample], val_samples: Sequence[Sample] = (),
        params: StackedParams | None = None, log_path: str | Path | None = None) -> TrainResult:
    """Train for ``config.max_steps`` steps over seeded shuffles of ``train_samples``."""
    if not train_samples:
        raise ValueError("training set is empty")
    state = new_state(config, params)
    rng = np.random.default_rng(config.seed)
    n = len(train_samples)
    order, cursor = rng.permutation(n), 0
    rows = []
    for _ in range(config.max_steps):
        idx = []
        while len(idx) < min(config.batch_size, n):
            if cursor == n:
                order, cursor = rng.permutation(n), 0
            idx.append(order[cursor])
            cursor += 1
        state, m = train_step(state, [train_samples[i] for i in idx], config)
        row = {"step": m.step, "lr": m.lr, "combined": m.combined}
        row.update({f"loss_stage{k + 1}": v for k, v in enumerate(m.stage_losses)})
        row["val_criterion"] = ""
        if val_samples and (m.step % config.val_every == 0 or m.step == config.max_steps):
            row["val_criterion"] = validate(state, val_samples, config)
        rows.append(row)
    if log_path is not None:
        write_log(rows, log_path, config.n_stages)
    return TrainResult(state, rows)


def write_log(rows: list[dict], path: str | Path, n_stages: int) -> None:
    fields = ["step", "lr"] + [f"loss_stage{k + 1}" for k in range(n_stages)] + ["combined", "val_criterion"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


# -- manifest-driven training ------------------------------------------------


def manifest_samples(manifest: DatasetManifest, split: str, R: int) -> list[Sample]:
    out = []
    for model in manifest.split(split):
        gt = manifest.load_voxels(model)
        for entry in model.views:
            out.append(make_sample(manifest.load_silhouette(entry), gt, R, model.model_id, entry.view))
    return out


def holdout(samples: Sequence[Sample], fraction: float, seed: int) -> tuple[list[Sample], list[Sample]]:
    """Seeded (train, validation) split holding out ``fraction`` of the samples."""
    n = len(samples)
    k = int(round(fraction * n))
    if n > 1:
        k = min(max(k, 1), n - 1)
    else:
        k = 0
    perm = np.random.default_rng(seed + 1).permutation(n)
    val = set(perm[:k].tolist())
    return [s for i, s in enumerate(samples) if i not in val], [samples[i] for i in sorted(val)]


def train(config: TrainConfig, manifest: DatasetManifest, out_dir: str | Path) -> TrainResult:
    """Train on the manifest's train split; write ``best.snw``, ``last.snw`` and ``train_log.csv``."""
    if not manifest.split("train"):
        raise ValueError("manifest has no training models")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = manifest_samples(manifest, "train", config.resolution)
    train_set, val_set = holdout(samples, config.val_fraction, config.seed)
    result = fit(config, train_set, val_set, log_path=out_dir / "train_log.csv")
    cfg = config.to_dict()
    meta = {"train_samples": len(train_set), "val_samples": len(val_set), "manifest_seed": manifest.seed,
            "category": manifest.category, "config_hash": config_hash(cfg)}
    result.best.meta.update(meta, best_step=result.state.best_step)
    best_step = result.state.best_step if result.state.best_params is not None else result.state.step
    save_checkpoint(result.best, out_dir / "best.snw", step=best_step, config=cfg)
    save_checkpoint(result.state.params, out_dir / "last.snw", step=result.state.step, config=cfg)
    return result
