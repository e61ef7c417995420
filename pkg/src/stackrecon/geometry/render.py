"""Orthographic silhouette rasterization."""

from __future__ import annotations

import numpy as np

from .grids import SilhouetteImage, VoxelGrid, cell_centers, world_to_cell
from .mesh import Mesh, MeshError
from .views import ViewAngle, camera_basis

# pixel-triangle pairs evaluated per vectorized block
_BLOCK = 1 << 22


def project(points: np.ndarray, view: ViewAngle, res: int) -> np.ndarray:
    """Map world points (..., 3) to continuous (row, col) pixel coordinates."""
    right, up, _ = camera_basis(view)
    u = points @ right
    v = points @ up
    col = world_to_cell(u, res)
    row = world_to_cell(-v, res)
    return np.stack([row, col], axis=-1)


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize_triangles(tri2d: np.ndarray, res: int) -> np.ndarray:
    """Pixel-centre coverage of 2-D triangles (T, 3, 2) given in (row, col).

    A pixel is set when its centre lies inside or on the boundary of any
    triangle.  Zero-area triangles cover nothing.
    """
    image = np.zeros((res, res), dtype=bool)
    a, b, c = tri2d[:, 0], tri2d[:, 1], tri2d[:, 2]
    area = _edge(a[:, 1], a[:, 0], b[:, 1], b[:, 0], c[:, 1], c[:, 0])
    keep = np.abs(area) > 1e-12
    lo = np.floor(tri2d.min(axis=1)).astype(int)
    hi = np.ceil(tri2d.max(axis=1)).astype(int)
    keep &= (hi[:, 0] >= 0) & (hi[:, 1] >= 0) & (lo[:, 0] < res) & (lo[:, 1] < res)
    tri2d, area = tri2d[keep], area[keep]
    if not len(tri2d):
        return image
    sign = np.sign(area)[:, None]
    rows, cols = np.mgrid[0:res, 0:res]
    py = rows.reshape(1, -1).astype(float)
    px = cols.reshape(1, -1).astype(float)
    step = max(1, _BLOCK // (res * res))
    for start in range(0, len(tri2d), step):
        t = tri2d[start:start + step]
        s = sign[start:start + step]
        ay, ax = t[:, 0, :1], t[:, 0, 1:]
        by, bx = t[:, 1, :1], t[:, 1, 1:]
        cy, cx = t[:, 2, :1], t[:, 2, 1:]
        inside = (s * _edge(ax, ay, bx, by, px, py) >= 0)
        inside &= (s * _edge(bx, by, cx, cy, px, py) >= 0)
        inside &= (s * _edge(cx, cy, ax, ay, px, py) >= 0)
        image |= inside.any(axis=0).reshape(res, res)
    return image


def render_silhouette(mesh: Mesh, view: ViewAngle, res: int) -> SilhouetteImage:
    """Binary silhouette of ``mesh`` seen orthographically from ``view``."""
    if res < 1:
        raise ValueError(f"resolution must be positive, got {res}")
    if mesh.n_triangles == 0:
        raise MeshError("cannot render a mesh with no triangles")
    tri2d = project(mesh.corners(), view, res)
    return SilhouetteImage(rasterize_triangles(tri2d, res).astype(np.uint8))


def voxel_projection(grid: VoxelGrid, view: ViewAngle, res: int | None = None) -> SilhouetteImage:
    """Max-projection of occupied voxel centres onto the image plane of ``view``.

    For axis-aligned views with ``res == R`` voxel centres land exactly on
    pixel centres, so this is the volumetric counterpart of
    :func:`render_silhouette`.
    """
    res = grid.resolution if res is None else res
    c = cell_centers(grid.resolution)
    ix, iy, iz = np.nonzero(grid.values > 0.5)
    pts = np.stack([c[ix], c[iy], c[iz]], axis=-1)
    rc = np.rint(project(pts, view, res)).astype(int)
    ok = ((rc >= 0) & (rc < res)).all(axis=1)
    image = np.zeros((res, res), dtype=np.uint8)
    image[rc[ok, 0], rc[ok, 1]] = 1
    return SilhouetteImage(image)
