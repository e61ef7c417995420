"""Triangle meshes: OBJ ingestion, canonical normalization, test primitives."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Malformed or degenerate mesh input."""


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError(f"triangle index out of range for {len(v)} vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def corners(self) -> np.ndarray:
        """(T, 3, 3) array of triangle vertex coordinates."""
        return self.vertices[self.triangles]


def normalize(mesh: Mesh) -> Mesh:
    """Center the bounding box at the origin and scale its longest edge to 1."""
    if mesh.n_vertices == 0:
        raise MeshError("cannot normalize a mesh without vertices")
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise MeshError("mesh has zero extent")
    center = (lo + hi) / 2.0
    return Mesh((mesh.vertices - center) / extent, mesh.triangles)


def parse_obj(text: str, source: str = "<string>") -> Mesh:
    """Parse Wavefront OBJ ``v``/``f`` records; polygons are fan-triangulated.

    Negative (relative) face indices are honoured.  ``vt``/``vn`` and all other
    records are ignored.
    """
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, list[int]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            try:
                x, y, z = (float(c) for c in parts[1:4])
            except ValueError as exc:
                raise MeshError(f"{source}:{lineno}: bad vertex record {raw.strip()!r}") from exc
            vertices.append((x, y, z))
        elif tag == "f":
            idx = []
            for token in parts[1:]:
                try:
                    i = int(token.split("/", 1)[0])
                except ValueError as exc:
                    raise MeshError(f"{source}:{lineno}: bad face index {token!r}") from exc
                # relative indices refer to vertices seen so far
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            if len(idx) < 3:
                raise MeshError(f"{source}:{lineno}: face with fewer than 3 vertices")
            faces.append((lineno, idx))

    if not vertices or not faces:
        raise MeshError(f"{source}: empty geometry ({len(vertices)} vertices, {len(faces)} faces)")
    n = len(vertices)
    triangles = []
    for lineno, idx in faces:
        bad = [i for i in idx if not 0 <= i < n]
        if bad:
            raise MeshError(
                f"{source}:{lineno}: face references vertex {bad[0] + 1} but only {n} vertices exist"
            )
        for j in range(1, len(idx) - 1):
            triangles.append((idx[0], idx[j], idx[j + 1]))
    return Mesh(np.array(vertices), np.array(triangles))


def load_mesh(path: str | Path) -> Mesh:
    """Read an OBJ file and return it normalized into the canonical frame."""
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise MeshError(f"{path}: unreadable ({exc})") from exc
    return normalize(parse_obj(text, str(path)))


def write_obj(mesh: Mesh, path: str | Path) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


# -- primitives -------------------------------------------------------------


def box_mesh(size=(1.0, 1.0, 1.0)) -> Mesh:
    """Closed axis-aligned box centred at the origin, outward-facing triangles."""
    sx, sy, sz = (s / 2.0 for s in size)
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # -x, +x
        (0, 4, 5, 1), (2, 3, 7, 6),  # -y, +y
        (0, 2, 6, 4), (1, 5, 7, 3),  # -z, +z
    ]
    tris = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return Mesh(v, np.array(tris))


def icosphere(subdivisions: int = 3, radius: float = 0.5) -> Mesh:
    """Geodesic sphere from repeated 4-way subdivision of an icosahedron."""
    p = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
             (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
             (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    vlist = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = vlist[a] + vlist[b]
                vlist.append(m / np.linalg.norm(m))
                cache[key] = len(vlist) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.array(vlist) * radius, np.array(faces))
