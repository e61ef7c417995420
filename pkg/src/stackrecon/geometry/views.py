"""Viewpoints on the sphere around the object.

A view is a (polar, azimuth) pair in degrees.  The training lattice places
views at ``alpha = (180 / n_polar) * l1`` and ``beta = (360 / n_azimuth) * l2``;
the random variant shifts each lattice point back by a per-view fraction
``gamma`` of one step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Widest angular margin that still gives exactly 20 hard views on the
# default 10 x 18 lattice; any value in [0, 18) degrees does.
DEFAULT_HARD_THRESHOLD_DEG = 15.0
DEFAULT_N_POLAR = 10
DEFAULT_N_AZIMUTH = 18

_CANONICAL_HARD_AXES = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0, 1.0], [0, 0, -1.0]])


@dataclass(frozen=True, order=True)
class ViewAngle:
    alpha_deg: float  # polar, (0, 180]
    beta_deg: float  # azimuth, (0, 360]

    def __post_init__(self):
        if not 0.0 < self.alpha_deg <= 180.0:
            raise ValueError(f"polar angle must lie in (0, 180], got {self.alpha_deg}")
        if not 0.0 < self.beta_deg <= 360.0:
            raise ValueError(f"azimuth must lie in (0, 360], got {self.beta_deg}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha_deg, "beta": self.beta_deg}

    @classmethod
    def from_dict(cls, d: dict) -> ViewAngle:
        return cls(float(d["alpha"]), float(d["beta"]))


def _check_counts(n_polar: int, n_azimuth: int) -> None:
    if n_polar < 1 or n_azimuth < 1:
        raise ValueError(f"view grid needs n_polar >= 1 and n_azimuth >= 1, got {n_polar}, {n_azimuth}")


def training_view_grid(n_polar: int = DEFAULT_N_POLAR, n_azimuth: int = DEFAULT_N_AZIMUTH) -> list[ViewAngle]:
    _check_counts(n_polar, n_azimuth)
    da, db = 180.0 / n_polar, 360.0 / n_azimuth
    return [ViewAngle(da * l1, db * l2) for l1 in range(1, n_polar + 1) for l2 in range(1, n_azimuth + 1)]


def random_view_grid(n_polar: int = DEFAULT_N_POLAR, n_azimuth: int = DEFAULT_N_AZIMUTH,
                     seed: int = 0) -> list[ViewAngle]:
    """Lattice views each pulled back by an independent ``gamma`` in (0, 1)."""
    _check_counts(n_polar, n_azimuth)
    rng = np.random.default_rng(seed)
    da, db = 180.0 / n_polar, 360.0 / n_azimuth
    views = []
    for l1 in range(1, n_polar + 1):
        for l2 in range(1, n_azimuth + 1):
            gamma = rng.random()
            while gamma == 0.0:
                gamma = rng.random()
            views.append(ViewAngle(da * (l1 - gamma), db * (l2 - gamma)))
    return views


def view_direction(view: ViewAngle) -> np.ndarray:
    a, b = math.radians(view.alpha_deg), math.radians(view.beta_deg)
    return np.array([math.sin(a) * math.cos(b), math.sin(a) * math.sin(b), math.cos(a)])


def camera_basis(view: ViewAngle) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(right, up, direction) orthonormal frame for an orthographic camera.

    ``up`` is +z projected onto the image plane, or +y when looking along z.
    """
    d = view_direction(view)
    up = np.array([0.0, 0.0, 1.0])
    up = up - up.dot(d) * d
    if np.linalg.norm(up) < 1e-9:
        up = np.array([0.0, 1.0, 0.0])
        up = up - up.dot(d) * d
    up /= np.linalg.norm(up)
    right = np.cross(up, d)
    right /= np.linalg.norm(right)
    return right, up, d


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    c = float(np.clip(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0))
    return math.degrees(math.acos(c))


def nearest_hard_axis_angle(view: ViewAngle) -> float:
    """Angle in degrees to the closest of +x, -x, +z, -z."""
    d = view_direction(view)
    return min(angle_between(d, axis) for axis in _CANONICAL_HARD_AXES)


def is_hard_view(view: ViewAngle, threshold_deg: float = DEFAULT_HARD_THRESHOLD_DEG) -> bool:
    """Front, back, top or bottom view, within ``threshold_deg``."""
    if threshold_deg <= 0:
        raise ValueError("threshold_deg must be positive")
    return nearest_hard_axis_angle(view) <= threshold_deg
