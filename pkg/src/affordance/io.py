"""File formats for depth maps, intrinsics, point clouds, voxel grids and label maps.

Depth maps
    16-bit single-channel PNG, value = depth in millimetres, 0 = missing.

Intrinsics
    Plain text, one ``key = value`` per line; keys ``fx fy cx cy`` are
    required, ``width height`` optional (taken from the depth image when
    absent).  ``#`` starts a comment.

Point clouds
    ASCII PLY with ``x y z nx ny nz`` float properties.

Voxel grids (little-endian)::

    offset  size  field
    0       8     magic  b"AFFVOXG1"
    8       12    dims   3 x uint32 (nx, ny, nz)
    20      8     voxel_size  float64, metres
    28      24    origin      3 x float64, grid corner in the Manhattan frame
    52      1     up_axis     uint8
    53      72    frame rotation, 3x3 float64 row-major (camera -> Manhattan)
    125     4     fill_conflicts  uint32
    129     nx*ny*nz bytes, one per cell (0 unknown, 1 free, 2 occupied),
                  x fastest, then y, then z

Label maps
    8-bit greyscale PNG: 0 = NOT, 128 = UNKNOWN, 255 = SUPPORTS.  One file
    per affordance, named ``<stem>_<affordance>.png``.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, DepthMap, ManhattanFrame, PointCloud
from .labeler import AFFORDANCES, AffordanceMap, Label
from .voxels import VoxelGrid

PathLike = Union[str, Path]

GRID_MAGIC = b"AFFVOXG1"
_GRID_HEADER = struct.Struct("<8s3Id3dB9dI")


# -- depth and intrinsics ------------------------------------------------------

def read_intrinsics(path: PathLike, shape: Optional[Tuple[int, int]] = None) -> CameraIntrinsics:
    """Parse a ``key = value`` intrinsics file.  ``shape`` (h, w) fills in a missing size."""
    vals: Dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        vals[key.lower()] = float(value)
    missing = {"fx", "fy", "cx", "cy"} - set(vals)
    if missing:
        raise ValueError(f"{path}: missing intrinsics {sorted(missing)}")
    if "width" not in vals or "height" not in vals:
        if shape is None:
            raise ValueError(f"{path}: width/height missing and no image shape given")
        vals.setdefault("height", shape[0])
        vals.setdefault("width", shape[1])
    return CameraIntrinsics(vals["fx"], vals["fy"], vals["cx"], vals["cy"],
                            int(vals["width"]), int(vals["height"]))


def write_intrinsics(path: PathLike, intr: CameraIntrinsics) -> None:
    lines = [f"{k} = {v!r}" for k, v in intr.as_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_depth_png(path: PathLike, intrinsics: Optional[CameraIntrinsics] = None) -> DepthMap:
    """Load a millimetre depth PNG.  Without intrinsics a default pinhole is assumed."""
    with Image.open(path) as im:
        mm = np.asarray(im, dtype=np.uint16 if im.mode.startswith("I;16") else np.int64)
    if mm.ndim != 2:
        raise ValueError(f"{path}: depth PNG must be single-channel")
    h, w = mm.shape
    if intrinsics is None:
        intrinsics = CameraIntrinsics.default(w, h)
    return DepthMap(mm.astype(np.float64) / 1000.0, intrinsics)


def write_depth_png(path: PathLike, depth: DepthMap) -> None:
    mm = np.rint(np.asarray(depth.depths) * 1000.0)
    if mm.max(initial=0) > 65535:
        raise ValueError("depth beyond 65.535 m cannot be stored in 16 bits")
    mm = np.where(depth.valid, mm, 0).astype("<u2")
    Image.fromarray(mm).save(path, format="PNG")


def read_rgb(path: PathLike) -> np.ndarray:
    """(h, w, 3) float image in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_rgb(path: PathLike, image: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path, format="PNG")


# -- point clouds --------------------------------------------------------------

def write_ply(path: PathLike, cloud: PointCloud) -> None:
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              *(f"property float {k}" for k in ("x", "y", "z", "nx", "ny", "nz")), "end_header"]
    data = np.hstack([cloud.points, cloud.normals])
    with open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        np.savetxt(fh, data, fmt="%.6f")


def read_ply(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """(points, normals) from an ASCII PLY written by :func:`write_ply`."""
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n = None
        for line in fh:
            if line.startswith("element vertex"):
                n = int(line.split()[2])
            if line.strip() == "end_header":
                break
        data = np.loadtxt(fh, ndmin=2)
    if n is None or len(data) != n:
        raise ValueError(f"{path}: vertex count mismatch")
    return data[:, :3], data[:, 3:6]


# -- voxel grids ---------------------------------------------------------------

def grid_to_bytes(grid: VoxelGrid) -> bytes:
    head = _GRID_HEADER.pack(GRID_MAGIC, *grid.dims, grid.voxel_size, *grid.origin,
                             grid.up_axis, *grid.frame.rotation.ravel(), grid.fill_conflicts)
    return head + np.asarray(grid.cells, np.uint8).tobytes(order="F")


def grid_from_bytes(data: bytes) -> VoxelGrid:
    if len(data) < _GRID_HEADER.size or data[:8] != GRID_MAGIC:
        raise ValueError("not a voxel grid file")
    f = _GRID_HEADER.unpack_from(data)
    dims = f[1:4]
    voxel_size = f[4]
    origin = np.array(f[5:8])
    up_axis = f[8]
    rot = np.array(f[9:18]).reshape(3, 3)
    conflicts = f[18]
    body = np.frombuffer(data, np.uint8, offset=_GRID_HEADER.size)
    if body.size != int(np.prod(dims)):
        raise ValueError("voxel grid payload has the wrong size")
    cells = body.reshape(dims, order="F")
    frame = ManhattanFrame(rot[2], rot[0], rot[1])
    return VoxelGrid(cells, voxel_size, origin, frame, up_axis, conflicts)


def write_grid(path: PathLike, grid: VoxelGrid) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def read_grid(path: PathLike) -> VoxelGrid:
    return grid_from_bytes(Path(path).read_bytes())


# -- label maps ----------------------------------------------------------------

def label_map_path(directory: PathLike, stem: str, affordance: str) -> Path:
    return Path(directory) / f"{stem}_{affordance}.png"


def write_label_png(path: PathLike, amap: AffordanceMap) -> None:
    lab = np.asarray(amap.labels)
    out = np.full(lab.shape, 128, np.uint8)
    out[lab == Label.NOT] = 0
    out[lab == Label.SUPPORTS] = 255
    Image.fromarray(out).save(path, format="PNG")


def read_label_png(path: PathLike, affordance: Optional[str] = None,
                   source: str = "generated") -> AffordanceMap:
    """Load a label PNG; the affordance defaults to the ``_<affordance>`` filename suffix."""
    path = Path(path)
    if affordance is None:
        affordance = next((a for a in AFFORDANCES if path.stem.endswith("_" + a)), "")
    with Image.open(path) as im:
        g = np.asarray(im.convert("L"))
    lab = np.full(g.shape, Label.UNKNOWN, np.int8)
    lab[g < 64] = Label.NOT
    lab[g > 191] = Label.SUPPORTS
    return AffordanceMap(lab, affordance, source)


def write_label_maps(directory: PathLike, stem: str, maps: Dict[str, AffordanceMap]) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, amap in maps.items():
        p = label_map_path(directory, stem, name)
        write_label_png(p, amap)
        paths[name] = p
    return paths


def read_label_maps(directory: PathLike, stem: str) -> Dict[str, AffordanceMap]:
    """Every ``<stem>_<affordance>.png`` present in ``directory``."""
    out = {}
    for a in AFFORDANCES:
        p = label_map_path(directory, stem, a)
        if p.exists():
            out[a] = read_label_png(p, a)
    return out
