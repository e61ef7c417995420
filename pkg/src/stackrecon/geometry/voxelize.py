"""Solid voxelization of triangle meshes by parity ray casting."""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from .grids import FILL_FRACTION, VoxelGrid, cell_centers, world_to_cell
from .mesh import Mesh, MeshError

log = logging.getLogger(__name__)

# Sub-voxel ray offset (in cell units) that keeps rays off shared edges
# and vertices of axis-aligned geometry.
_RAY_JITTER = (1.2345e-6, 2.3456e-6)
_BLOCK = 1 << 22


def _ray_hits(corners: np.ndarray, ys: np.ndarray, zs: np.ndarray):
    """Intersections of +x rays through (ys[j], zs[k]) with triangles.

    Returns (ray_j, ray_k, x) arrays, one entry per crossing.
    """
    ry, rz = np.meshgrid(ys, zs, indexing="ij")
    ry, rz = ry.reshape(1, -1), rz.reshape(1, -1)
    jj, kk = np.meshgrid(np.arange(len(ys)), np.arange(len(zs)), indexing="ij")
    jj, kk = jj.reshape(-1), kk.reshape(-1)

    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    # barycentric set-up in the yz plane
    det = (b[:, 1] - a[:, 1]) * (c[:, 2] - a[:, 2]) - (c[:, 1] - a[:, 1]) * (b[:, 2] - a[:, 2])
    keep = np.abs(det) > 1e-15
    a, b, c, det = a[keep], b[keep], c[keep], det[keep]
    out_j, out_k, out_x = [], [], []
    step = max(1, _BLOCK // ry.size)
    for s in range(0, len(a), step):
        A, B, C, D = a[s:s + step], b[s:s + step], c[s:s + step], det[s:s + step, None]
        dy, dz = ry - A[:, 1:2], rz - A[:, 2:3]
        u = ((C[:, 2:3] - A[:, 2:3]) * dy - (C[:, 1:2] - A[:, 1:2]) * dz) / D
        v = ((B[:, 1:2] - A[:, 1:2]) * dz - (B[:, 2:3] - A[:, 2:3]) * dy) / D
        hit = (u >= 0) & (v >= 0) & (u + v <= 1)
        ti, ri = np.nonzero(hit)
        if not len(ti):
            continue
        x = A[ti, 0] + u[ti, ri] * (B[ti, 0] - A[ti, 0]) + v[ti, ri] * (C[ti, 0] - A[ti, 0])
        out_j.append(jj[ri])
        out_k.append(kk[ri])
        out_x.append(x)
    if not out_x:
        empty = np.zeros(0, dtype=int)
        return empty, empty, np.zeros(0)
    return np.concatenate(out_j), np.concatenate(out_k), np.concatenate(out_x)


def _parity_fill(corners: np.ndarray, R: int) -> tuple[np.ndarray, bool]:
    centers = cell_centers(R)
    cell = 1.0 / (FILL_FRACTION * R)
    ys = centers + _RAY_JITTER[0] * cell
    zs = centers + _RAY_JITTER[1] * cell
    j, k, x = _ray_hits(corners, ys, zs)
    # first voxel whose centre lies strictly beyond each crossing
    first = np.clip(np.floor(world_to_cell(x, R)).astype(int) + 1, 0, R)
    counts = np.zeros((R + 1, R, R), dtype=np.int64)
    np.add.at(counts, (first, j, k), 1)
    crossings = np.cumsum(counts, axis=0)[:R]
    per_ray = counts.sum(axis=0)
    watertight = bool(np.all(per_ray % 2 == 0))
    return (crossings % 2).astype(np.uint8), watertight


def _surface_voxels(corners: np.ndarray, R: int) -> np.ndarray:
    """Voxels touched by densely sampled points on every triangle."""
    shell = np.zeros((R, R, R), dtype=bool)
    cell = 1.0 / (FILL_FRACTION * R)
    for tri in corners:
        edge = max(np.linalg.norm(tri[1] - tri[0]), np.linalg.norm(tri[2] - tri[0]),
                   np.linalg.norm(tri[2] - tri[1]))
        n = max(2, int(np.ceil(3.0 * edge / cell)) + 1)
        s, t = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n), indexing="ij")
        m = s + t <= 1.0
        s, t = s[m], t[m]
        pts = tri[0] + s[:, None] * (tri[1] - tri[0]) + t[:, None] * (tri[2] - tri[0])
        idx = np.rint(world_to_cell(pts, R)).astype(int)
        ok = ((idx >= 0) & (idx < R)).all(axis=1)
        shell[idx[ok, 0], idx[ok, 1], idx[ok, 2]] = True
    return shell


def _flood_fill(corners: np.ndarray, R: int) -> np.ndarray:
    shell = _surface_voxels(corners, R)
    labels, _ = ndimage.label(~shell)
    border = np.unique(np.concatenate([
        labels[0].ravel(), labels[-1].ravel(), labels[:, 0].ravel(),
        labels[:, -1].ravel(), labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
    ]))
    exterior = np.isin(labels, border[border > 0])
    return (~exterior).astype(np.uint8)


def voxelize(mesh: Mesh, R: int) -> VoxelGrid:
    """Binary occupancy: a voxel is filled iff its centre is inside the mesh.

    Inside-ness comes from the parity of +x ray crossings.  If any ray sees an
    odd number of crossings the mesh is not closed, and the grid is instead
    built from the rasterized surface shell plus everything the exterior
    flood fill cannot reach.
    """
    if R < 2:
        raise ValueError(f"voxel resolution must be at least 2, got {R}")
    if mesh.n_triangles == 0:
        raise MeshError("cannot voxelize a mesh with no triangles")
    corners = mesh.corners()
    values, watertight = _parity_fill(corners, R)
    if not watertight:
        log.warning("mesh is not watertight; using flood-fill voxelization")
        values = _flood_fill(corners, R)
    return VoxelGrid(values)
