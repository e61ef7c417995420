"""Raster and voxel containers plus the shared canonical framing.

Both the silhouette raster and the voxel grid map the canonical unit box
``[-0.5, 0.5]`` onto the central ``FILL_FRACTION`` of their extent, so a
pixel or voxel with index ``i`` out of ``n`` sits at world coordinate
``((i + 0.5) / n - 0.5) / FILL_FRACTION``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FILL_FRACTION = 0.9


def cell_centers(n: int) -> np.ndarray:
    """World coordinates of the n cell centres along one axis."""
    return ((np.arange(n) + 0.5) / n - 0.5) / FILL_FRACTION


def world_to_cell(x: np.ndarray, n: int) -> np.ndarray:
    """Continuous cell coordinate; cell centres land on integers."""
    return (np.asarray(x) * FILL_FRACTION + 0.5) * n - 0.5


def _nearest_resample(a: np.ndarray, size: int) -> np.ndarray:
    idx = [np.minimum((np.arange(size) + 0.5) * n / size, n - 1).astype(int) for n in a.shape]
    return a[np.ix_(*idx)]


@dataclass(frozen=True)
class SilhouetteImage:
    """Binary raster; ``pixels[row, col]`` with row 0 at the top."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 2:
            raise ValueError(f"silhouette must be 2-D, got shape {p.shape}")
        if not np.isin(p, (0, 1)).all():
            raise ValueError("silhouette pixels must be 0 or 1")
        object.__setattr__(self, "pixels", p.astype(np.uint8))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def resized(self, size: int) -> SilhouetteImage:
        if self.width == self.height == size:
            return self
        return SilhouetteImage(_nearest_resample(self.pixels, size))

    def mirrored(self) -> SilhouetteImage:
        return SilhouetteImage(self.pixels[:, ::-1])


@dataclass(frozen=True)
class VoxelGrid:
    """R x R x R occupancy indexed ``values[x, y, z]``."""

    values: np.ndarray
    binary: bool = True

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or len(set(v.shape)) != 1:
            raise ValueError(f"voxel grid must be cubic R x R x R, got shape {v.shape}")
        if self.binary:
            if not np.isin(v, (0, 1)).all():
                raise ValueError("binary voxel grid must hold only 0 and 1")
            v = v.astype(np.uint8)
        else:
            v = v.astype(np.float64)
            if v.size and (v.min() < 0.0 or v.max() > 1.0):
                raise ValueError("voxel values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def occupied(self) -> int:
        return int(np.count_nonzero(self.values))

    def resized(self, size: int) -> VoxelGrid:
        if self.resolution == size:
            return self
        return VoxelGrid(_nearest_resample(self.values, size), self.binary)
