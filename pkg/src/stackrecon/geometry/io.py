"""On-disk formats for silhouettes and voxel grids.

Silhouettes are written either as binary PBM (``P4``) or as a raw packed
bitset with a JSON sidecar.  Voxel grids use a small container: the magic
``VOX1``, R as little-endian uint32, then R^3 bits packed with x varying
fastest and z slowest (LSB-first within each byte).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grids import SilhouetteImage, VoxelGrid
from .views import ViewAngle

VOX_MAGIC = b"VOX1"


class FormatError(ValueError):
    pass


def write_pbm(image: SilhouetteImage, path: str | Path) -> None:
    header = f"P4\n{image.width} {image.height}\n".encode("ascii")
    body = np.packbits(image.pixels.astype(bool), axis=1).tobytes()
    Path(path).write_bytes(header + body)


def read_pbm(path: str | Path) -> SilhouetteImage:
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    # magic, width, height; comments start with '#'
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P4":
        raise FormatError(f"{path}: not a binary PBM (magic {tokens[0]!r})")
    width, height = int(tokens[1]), int(tokens[2])
    pos += 1  # single whitespace byte before the raster
    row_bytes = (width + 7) // 8
    raster = np.frombuffer(data[pos:pos + row_bytes * height], dtype=np.uint8)
    if raster.size != row_bytes * height:
        raise FormatError(f"{path}: truncated raster")
    bits = np.unpackbits(raster.reshape(height, row_bytes), axis=1)[:, :width]
    return SilhouetteImage(bits)


def write_bitset(image: SilhouetteImage, path: str | Path, view: ViewAngle | None = None,
                 model_id: str | None = None) -> Path:
    """Packed row-major bits at ``path`` plus ``<path>.json`` metadata."""
    path = Path(path)
    path.write_bytes(np.packbits(image.pixels.reshape(-1).astype(bool)).tobytes())
    meta = {"width": image.width, "height": image.height,
            "view": view.to_dict() if view else None, "model_id": model_id}
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return sidecar


def read_bitset(path: str | Path) -> tuple[SilhouetteImage, dict]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    w, h = int(meta["width"]), int(meta["height"])
    bits = np.unpackbits(np.frombuffer(path.read_bytes(), dtype=np.uint8))
    if bits.size < w * h:
        raise FormatError(f"{path}: expected {w * h} bits, found {bits.size}")
    return SilhouetteImage(bits[: w * h].reshape(h, w)), meta


def write_silhouette(image: SilhouetteImage, path: str | Path, **meta) -> None:
    if Path(path).suffix in (".pbm", ".pgm"):
        write_pbm(image, path)
    else:
        write_bitset(image, path, **meta)


def read_silhouette(path: str | Path) -> SilhouetteImage:
    if Path(path).suffix in (".pbm", ".pgm"):
        return read_pbm(path)
    return read_bitset(path)[0]


def write_vox(grid: VoxelGrid, path: str | Path) -> None:
    if not grid.binary:
        raise FormatError("only binary grids can be stored as VOX1")
    R = grid.resolution
    # values[x, y, z] -> z-major order so x varies fastest in the stream
    bits = grid.values.transpose(2, 1, 0).reshape(-1).astype(bool)
    payload = np.packbits(bits, bitorder="little").tobytes()
    Path(path).write_bytes(VOX_MAGIC + struct.pack("<I", R) + payload)


def read_vox(path: str | Path) -> VoxelGrid:
    data = Path(path).read_bytes()
    if data[:4] != VOX_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    (R,) = struct.unpack("<I", data[4:8])
    bits = np.unpackbits(np.frombuffer(data[8:], dtype=np.uint8), bitorder="little")
    if bits.size < R ** 3:
        raise FormatError(f"{path}: expected {R ** 3} bits, found {bits.size}")
    return VoxelGrid(bits[: R ** 3].reshape(R, R, R).transpose(2, 1, 0))
