"""Finite-difference verification of the autodiff engine."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, mul, no_grad, record_branches, tensor_sum

log = logging.getLogger(__name__)

Sampler = Callable[[np.random.Generator, tuple], np.ndarray]


def _normal(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    return rng.standard_normal(shape)


@dataclass(frozen=True)
class GradCheckReport:
    worst: float
    checked: int
    skipped: int

    @property
    def checked_fraction(self) -> float:
        total = self.checked + self.skipped
        return self.checked / total if total else 0.0


def check_gradients(op: Callable[..., Tensor], shapes: Sequence[tuple], seed: int = 0, **kwargs) -> float:
    """Largest relative disagreement between reverse-mode and central differences.

    See :func:`gradient_report` for the keyword arguments.
    """
    return gradient_report(op, shapes, seed, **kwargs).worst


def gradient_report(
    op: Callable[..., Tensor],
    shapes: Sequence[tuple],
    seed: int = 0,
    *,
    sampler: Sampler = _normal,
    inputs: Sequence[np.ndarray] | None = None,
    max_coords: int | None = None,
    step: float = 1e-3,
    piecewise: bool = False,
    min_step: float = 1e-8,
    smooth_tol: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    ``op`` receives one float64 Tensor per entry of ``shapes``.  A non-scalar
    output is reduced with a fixed random projection so every output element
    participates.  Each coordinate is perturbed by ``step * max(1, |x|)``.
    With ``max_coords`` set, only that many randomly chosen coordinates per
    input are probed.

    Piecewise-linear activations make the function non-differentiable on a
    measure-zero set, and a stencil that straddles such a kink gives a
    meaningless difference.  With ``piecewise=True`` the branch masks of the
    piecewise ops at x - h and x + h must equal those at x, and the difference
    must change by at most ``smooth_tol`` (relative) when h is halved;
    otherwise h is divided by 10 down to ``min_step``.  A coordinate that
    never qualifies before rounding noise takes over is counted as skipped.

    The error of one coordinate is ``|analytic - fd| / max(|analytic|, |fd|, 1e-8)``.
    """
    rng = np.random.default_rng(seed)
    if inputs is None:
        arrays = [np.asarray(sampler(rng, tuple(s)), dtype=np.float64) for s in shapes]
    else:
        arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*leaves)
    projection = None if out.size == 1 else rng.standard_normal(out.shape)

    def scalar(o: Tensor) -> Tensor:
        return tensor_sum(o) if projection is None else tensor_sum(mul(o, Tensor(projection)))

    backward(scalar(out))

    def evaluate() -> tuple[float, list[np.ndarray]]:
        with no_grad(), record_branches() as masks:
            o = op(*[Tensor(a) for a in arrays])
        return float(o.data.sum() if projection is None else (o.data * projection).sum()), masks

    worst, checked, skipped = 0.0, 0, 0
    for k, (arr, leaf) in enumerate(zip(arrays, leaves)):
        analytic = np.zeros_like(arr) if leaf.grad is None else leaf.grad
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            fd = _difference(flat, int(i), evaluate, step, piecewise, min_step, smooth_tol)
            if fd is None:
                skipped += 1
                continue
            checked += 1
            a = analytic.reshape(-1)[i]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            if err > worst:
                log.debug("new worst %.3g at input %d coord %d: analytic %.6g, fd %.6g", err, k, i, a, fd)
                worst = err
    if skipped:
        log.info("skipped %d of %d coordinates with no smooth stencil", skipped, skipped + checked)
    return GradCheckReport(worst, checked, skipped)


def _same_piece(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _difference(flat: np.ndarray, i: int, evaluate, step: float, piecewise: bool,
                min_step: float, smooth_tol: float) -> float | None:
    x0 = flat[i]
    base = evaluate()[1] if piecewise else None

    def central(h: float) -> tuple[float, bool, float]:
        flat[i] = x0 + h
        f_plus, m_plus = evaluate()
        flat[i] = x0 - h
        f_minus, m_minus = evaluate()
        flat[i] = x0
        same = not piecewise or (_same_piece(base, m_plus) and _same_piece(base, m_minus))
        noise = 1e-14 * max(abs(f_plus), abs(f_minus)) / h
        return (f_plus - f_minus) / (2.0 * h), same, noise

    h = step * max(1.0, abs(x0))
    fd, same, noise = central(h)
    if not piecewise:
        return fd
    while h >= min_step * max(1.0, abs(x0)) and noise <= smooth_tol * abs(fd):
        if same:
            half = central(h / 2.0)[0]
            if abs(fd - half) <= smooth_tol * max(abs(fd), abs(half), 1e-8):
                return fd
        h /= 10.0
        fd, same, noise = central(h)
    return None


# -- fixed suites used by the command line and the acceptance tests ----------

OP_TOLERANCE = 1e-4
STACK_TOLERANCE = 1e-3


def _away_from_zero(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Normal draws pushed at least 0.1 away from the activation kink."""
    x = rng.standard_normal(shape)
    return np.where(x >= 0, x + 0.1, x - 0.1)


def op_suite() -> dict[str, Callable[[int], float]]:
    """name -> check(seed) for every differentiable primitive."""
    from . import tensor as T

    def conv(seed):
        return check_gradients(lambda x, w, b: T.conv3d(x, w, b, stride=2, padding=1),
                               [(2, 5, 5, 5), (3, 2, 3, 3, 3), (3,)], seed)

    def conv_t(seed):
        return check_gradients(lambda x, w, b: T.conv_transpose3d(x, w, b, stride=2, padding=0),
                               [(2, 3, 3, 3), (2, 3, 2, 2, 2), (3,)], seed)

    def conv_t_padded(seed):
        return check_gradients(lambda x, w, b: T.conv_transpose3d(x, w, b, stride=2, padding=1),
                               [(2, 3, 3, 3), (2, 2, 4, 4, 4), (2,)], seed)

    def root_loss(seed):
        # Targets sit 0.05 above or below the prediction, clear of the tie.
        rng = np.random.default_rng(seed + 1)
        pred = rng.uniform(0.1, 0.9, (3, 4, 4))
        offset = np.where(rng.random(pred.shape) < 0.5, -1.0, 1.0) * rng.uniform(0.05, 0.1, pred.shape)
        return check_gradients(lambda p, t: T.root_abs_loss(p, t, 1e-4), [], seed,
                               inputs=[pred, pred + offset])

    return {
        "add": lambda seed: check_gradients(T.add, [(3, 4), (4,)], seed),
        "mul": lambda seed: check_gradients(T.mul, [(3, 4), (3, 4)], seed),
        "mean": lambda seed: check_gradients(T.tensor_mean, [(2, 3, 4)], seed),
        "reshape": lambda seed: check_gradients(lambda x: T.reshape(x, (6, 4)), [(2, 3, 4)], seed),
        "relu": lambda seed: check_gradients(T.relu, [(4, 5)], seed, sampler=_away_from_zero),
        "leaky_relu": lambda seed: check_gradients(T.leaky_relu, [(4, 5)], seed, sampler=_away_from_zero),
        "sigmoid": lambda seed: check_gradients(T.sigmoid, [(4, 5)], seed),
        "conv3d": conv,
        "conv_transpose3d": conv_t,
        "conv_transpose3d_padded": conv_t_padded,
        "root_abs_loss": root_loss,
    }


def stack_report(seed: int = 0, resolution: int = 16, width_mult: float = 1 / 16,
                 max_coords: int = 8) -> GradCheckReport:
    """Gradient check of the full two-stage loss at a tiny scale.

    The loss runs through both stages with default targets and weights; the
    replicated silhouette stays constant.  Biases are drawn at random so the
    check point is generic rather than sitting on activation kinks.
    """
    from .network import NetworkSpec, StackedParams, StageParams, init_params, stacked_forward
    from .training import TrainConfig, combined_loss, stage_target

    rng = np.random.default_rng(seed)
    spec = NetworkSpec(resolution=resolution, width_mult=width_mult)
    params = init_params(spec, n_stages=2, seed=seed)
    for name, t in params.named_parameters():
        if name.endswith(".bias"):
            t.data = 0.1 * rng.standard_normal(t.shape)
    config = TrainConfig(resolution=resolution, width_mult=width_mult)

    c = (np.arange(resolution) + 0.5) / resolution - 0.5
    yy, zz = np.meshgrid(c, c, indexing="ij")
    disk = (yy ** 2 + zz ** 2 <= 0.16).astype(float)
    x_rep = np.broadcast_to(disk, (resolution,) * 3)[None, None].copy()
    xx, yy, zz = np.meshgrid(c, c, c, indexing="ij")
    gt = (xx ** 2 + yy ** 2 + zz ** 2 <= 0.16).astype(float)[None, None]
    targets = [stage_target(k, x_rep, gt, config) for k in (1, 2)]

    keys = [list(stage.weights) for stage in params.stages]
    named = params.named_parameters()

    def loss(*leaves):
        n = len(keys[0])
        stages = [StageParams(dict(zip(keys[0], leaves[:n]))), StageParams(dict(zip(keys[1], leaves[n:])))]
        outputs = stacked_forward(StackedParams(spec, stages), Tensor(x_rep))
        return combined_loss(outputs, targets, config.lambdas, config.eps)[0]

    return gradient_report(loss, [], seed, inputs=[t.data for _, t in named], max_coords=max_coords,
                           piecewise=True)
