"""Box-and-plane rooms with exactly known geometry.

Rooms span ``[0, W] x [0, D] x [0, H]`` with the floor at ``z = 0``.  Furniture
is a set of axis-aligned boxes.  Scenes render to depth maps by exact ray
casting, and :func:`oracle_affordances` evaluates the pose templates directly
against the continuous geometry, so it serves as an independent check on the
voxel pipeline.

Scene text format, one primitive per line (``#`` starts a comment)::

    room W D H
    camera X Y Z YAW_DEG PITCH_DEG
    intrinsics FX FY CX CY WIDTH HEIGHT
    noise SIGMA DROPOUT SEED
    box CATEGORY X0 Y0 Z0 X1 Y1 Z1

Yaw is measured from +x toward +y; positive pitch tilts the camera down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numba
import numpy as np

from .errors import CameraInsideGeometry
from .geometry import CameraIntrinsics, DepthMap, pixel_rays
from .labeler import AffordanceMap, Label, PoseFilter, Thresholds

ROOM_CATEGORIES = ("floor", "ceiling", "wall")
CATEGORY_COLORS = {
    "floor": (0.55, 0.42, 0.30),
    "ceiling": (0.92, 0.92, 0.90),
    "wall": (0.80, 0.78, 0.70),
    "table": (0.45, 0.25, 0.12),
    "bed": (0.25, 0.35, 0.70),
    "shelf": (0.30, 0.55, 0.30),
}
LIGHT = np.array([0.3, 0.2, 1.0]) / np.linalg.norm([0.3, 0.2, 1.0])


@dataclass(frozen=True)
class SceneBox:
    category: str
    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box {self}")


@dataclass(frozen=True)
class SceneSpec:
    room: Tuple[float, float, float]
    camera_position: Tuple[float, float, float]
    yaw: float
    pitch: float
    intrinsics: CameraIntrinsics
    boxes: Tuple[SceneBox, ...] = ()
    noise_sigma: float = 0.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        W, D, H = self.room
        for b in self.boxes:
            if min(b.lo) < -1e-9 or b.hi[0] > W + 1e-9 or b.hi[1] > D + 1e-9 or b.hi[2] > H + 1e-9:
                raise ValueError(f"box {b} leaves the room")
        c = self.camera_position
        if not all(0 < c[a] < self.room[a] for a in range(3)):
            raise ValueError("camera must be inside the room")

    def box_array(self) -> np.ndarray:
        if not self.boxes:
            return np.zeros((0, 6))
        return np.array([list(b.lo) + list(b.hi) for b in self.boxes], float)

    def camera_axes(self) -> np.ndarray:
        """Columns are the camera x (right), y (down), z (forward) axes in room coordinates."""
        yaw, pitch = math.radians(self.yaw), math.radians(self.pitch)
        fwd = np.array([math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch),
                        -math.sin(pitch)])
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd], axis=1)


@dataclass(frozen=True)
class Render:
    depth: DepthMap           # possibly noisy
    exact_depth: np.ndarray   # (H, W) noise-free
    points: np.ndarray        # (H, W, 3) room coordinates of the hit
    normals: np.ndarray       # (H, W, 3) outward surface normals
    category: np.ndarray      # (H, W) object array of category names
    rgb: np.ndarray           # (H, W, 3) float in [0, 1]


def _ray_cast(spec: SceneSpec):
    W, D, H = spec.room
    pos = np.asarray(spec.camera_position, float)
    C = spec.camera_axes()
    dirs = pixel_rays(spec.intrinsics) @ C.T
    shape = dirs.shape[:2]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / dirs
        room_hi = np.array([W, D, H])
        t_axes = np.where(dirs > 0, (room_hi - pos) * inv, np.where(dirs < 0, -pos * inv, np.inf))
    axis = np.argmin(t_axes, axis=-1)
    t = np.take_along_axis(t_axes, axis[..., None], -1)[..., 0]
    normal = np.zeros(shape + (3,))
    sgn = np.sign(np.take_along_axis(dirs, axis[..., None], -1)[..., 0])
    np.put_along_axis(normal, axis[..., None], -sgn[..., None], -1)
    cat = np.where(axis == 2, np.where(sgn < 0, "floor", "ceiling"), "wall").astype(object)
    for b in spec.boxes:
        lo, hi = np.asarray(b.lo), np.asarray(b.hi)
        if np.all(pos > lo) and np.all(pos < hi):
            raise CameraInsideGeometry(f"camera inside {b.category} box")
        with np.errstate(invalid="ignore", over="ignore"):
            t1 = (lo - pos) * inv
            t2 = (hi - pos) * inv
        tn = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tf = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
        # rays parallel to a slab either always or never overlap it
        par = dirs == 0
        inside = (pos >= lo) & (pos <= hi)
        tn = np.where(par, np.where(inside, -np.inf, np.inf), tn)
        tf = np.where(par, np.where(inside, np.inf, -np.inf), tf)
        enter_axis = np.argmax(tn, axis=-1)
        t_in = np.max(tn, axis=-1)
        t_out = np.min(tf, axis=-1)
        hit = (t_in <= t_out) & (t_in > 1e-9) & (t_in < t)
        if not np.any(hit):
            continue
        t = np.where(hit, t_in, t)
        n = np.zeros(shape + (3,))
        s = np.sign(np.take_along_axis(dirs, enter_axis[..., None], -1)[..., 0])
        np.put_along_axis(n, enter_axis[..., None], -s[..., None], -1)
        normal = np.where(hit[..., None], n, normal)
        cat = np.where(hit, b.category, cat)
    points = pos + dirs * t[..., None]
    return t, points, normal, cat


def shade(category: np.ndarray, normals: np.ndarray, rng: np.random.Generator,
          noise: float = 0.03) -> np.ndarray:
    """Flat category colours, Lambertian shading from above, Gaussian pixel noise."""
    base = np.zeros(normals.shape)
    for name in np.unique(category):
        base[category == name] = CATEGORY_COLORS.get(name, (0.5, 0.5, 0.5))
    light = 0.35 + 0.65 * np.clip(normals @ LIGHT, 0, 1)
    rgb = base * light[..., None] + noise * rng.standard_normal(base.shape)
    return np.clip(rgb, 0.0, 1.0)


def render(spec: SceneSpec) -> Render:
    """Exact ray-box render plus the noisy depth map and a shaded RGB image."""
    t, points, normals, cat = _ray_cast(spec)
    rng = np.random.default_rng(spec.seed)
    depth = t.copy()
    if spec.noise_sigma > 0:
        depth = depth + spec.noise_sigma * rng.standard_normal(depth.shape)
    if spec.dropout > 0:
        depth[rng.random(depth.shape) < spec.dropout] = 0.0
    depth = np.maximum(depth, 0.0)
    rgb = shade(cat, normals, np.random.default_rng(spec.seed + 7919))
    return Render(DepthMap(depth, spec.intrinsics), t, points, normals, cat, rgb)


def render_depth(spec: SceneSpec) -> DepthMap:
    return render(spec).depth


# ---------------------------------------------------------------------------
# text format


def _num(v: float) -> str:
    """Shortest text that parses back to the same float."""
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def format_scene(spec: SceneSpec) -> str:
    k = spec.intrinsics
    lines = ["room " + " ".join(map(_num, spec.room)),
             "camera " + " ".join(map(_num, (*spec.camera_position, spec.yaw, spec.pitch))),
             "intrinsics " + " ".join(map(_num, (k.fx, k.fy, k.cx, k.cy))) + f" {k.width} {k.height}",
             f"noise {_num(spec.noise_sigma)} {_num(spec.dropout)} {spec.seed}"]
    for b in spec.boxes:
        lines.append(f"box {b.category} " + " ".join(map(_num, (*b.lo, *b.hi))))
    return "\n".join(lines) + "\n"


def parse_scene(text: str) -> SceneSpec:
    fields: Dict[str, list] = {}
    boxes = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "box":
                vals = [float(v) for v in rest[1:]]
                if len(vals) != 6:
                    raise ValueError("box needs 6 coordinates")
                boxes.append(SceneBox(rest[0], tuple(vals[:3]), tuple(vals[3:])))
            elif key in ("room", "camera", "intrinsics", "noise"):
                fields[key] = [float(v) for v in rest]
            else:
                raise ValueError(f"unknown primitive {key!r}")
        except ValueError as e:
            raise ValueError(f"line {n}: {e}") from None
    missing = {"room", "camera", "intrinsics"} - set(fields)
    if missing:
        raise ValueError(f"scene lacks {sorted(missing)}")
    fx, fy, cx, cy, w, h = fields["intrinsics"]
    sigma, dropout, seed = fields.get("noise", [0.0, 0.0, 0])
    cam = fields["camera"]
    return SceneSpec(tuple(fields["room"]), tuple(cam[:3]), cam[3], cam[4],
                     CameraIntrinsics(fx, fy, cx, cy, int(w), int(h)), tuple(boxes),
                     sigma, dropout, int(seed))


def load_scene(path) -> SceneSpec:
    return parse_scene(Path(path).read_text())


# ---------------------------------------------------------------------------
# random scenes

SYNTH_INTRINSICS = CameraIntrinsics(142.5, 142.5, 80.0, 60.0, 160, 120)


def _snap(x: float, step: float = 0.1) -> float:
    return round(round(x / step) * step, 6)


def random_scene(rng: np.random.Generator, intrinsics: CameraIntrinsics = SYNTH_INTRINSICS,
                 noise_sigma: float = 0.0, dropout: float = 0.0) -> SceneSpec:
    """A room with 2-5 pieces of furniture viewed from near one wall.

    All coordinates are multiples of 10 cm; the camera stands near ``y = 0``
    looking roughly along +y and tilted down.
    """
    W = _snap(rng.uniform(3.6, 6.0))
    D = _snap(rng.uniform(4.0, 6.5))
    H = _snap(rng.uniform(2.6, 3.0))
    kinds = {
        "bed": [((2.0, 1.4), (0.5, 0.5)), ((1.9, 0.9), (0.5, 0.5))],
        "table": [((1.2, 0.8), (0.7, 0.8)), ((1.0, 0.6), (0.7, 0.8)), ((1.6, 0.9), (0.7, 0.8))],
        "shelf": [((1.0, 0.4), (1.2, 1.8)), ((0.8, 0.4), (1.0, 1.6))],
    }
    placed: List[SceneBox] = []
    n_items = int(rng.integers(2, 6))
    for _ in range(n_items * 10):
        if len(placed) >= n_items:
            break
        cat = ("bed", "table", "table", "shelf")[int(rng.integers(0, 4))]
        (sx, sy), (hlo, hhi) = kinds[cat][int(rng.integers(0, len(kinds[cat])))]
        if rng.random() < 0.5:
            sx, sy = sy, sx
        h = _snap(rng.uniform(hlo, hhi))
        if cat == "shelf":
            # shelves stand against a wall
            side = int(rng.integers(0, 3))
            if side == 0:
                x0, y0 = 0.0, _snap(rng.uniform(1.5, D - sy))
            elif side == 1:
                x0, y0 = _snap(W - sx), _snap(rng.uniform(1.5, D - sy))
            else:
                x0, y0 = _snap(rng.uniform(0, W - sx)), _snap(D - sy)
        else:
            x0 = _snap(rng.uniform(0.0, W - sx))
            y0 = _snap(rng.uniform(1.5, D - sy))
        lo, hi = (x0, y0, 0.0), (_snap(x0 + sx), _snap(y0 + sy), h)
        if hi[0] > W or hi[1] > D:
            continue
        if any(lo[0] < b.hi[0] + 0.3 and b.lo[0] < hi[0] + 0.3 and
               lo[1] < b.hi[1] + 0.3 and b.lo[1] < hi[1] + 0.3 for b in placed):
            continue
        placed.append(SceneBox(cat, lo, hi))
    cam = (float(rng.uniform(1.0, W - 1.0)), float(rng.uniform(0.25, 0.5)),
           float(rng.uniform(1.3, 1.7)))
    yaw = 90.0 + float(rng.uniform(-20, 20))
    pitch = float(rng.uniform(5, 15))
    return SceneSpec((W, D, H), cam, yaw, pitch, intrinsics, tuple(placed),
                     noise_sigma, dropout, int(rng.integers(0, 2**31 - 1)))


def scene_suite(n: int = 20, seed: int = 0, **kw) -> List[SceneSpec]:
    rng = np.random.default_rng(seed)
    return [random_scene(rng, **kw) for _ in range(n)]


def write_suite(directory, n: int = 20, seed: int = 0) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, spec in enumerate(scene_suite(n, seed)):
        p = directory / f"scene_{i:02d}.txt"
        p.write_text(format_scene(spec))
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# analytic oracle
#
# Every criteria cell of a pose is a voxel-sized cube placed in continuous
# space and classified against the exact geometry as seen by the camera:
#   OCCUPIED - a visible surface crosses the cube, or its centre is solid (or
#              hidden) below a visible upward-facing top surface,
#   FREE     - otherwise, when its centre is empty and in view,
#   UNKNOWN  - anything else.
# The pose is evaluated at a grid of in-plane anchor positions, in half-voxel
# steps out to ``band`` half-voxels around the pixel's surface point.  Pixels
# whose label changes across the anchors fall in the margin band and are
# reported UNKNOWN.  All probes of one pixel sit on a half-voxel lattice, so
# cell classes are memoised per pixel.

_FREE, _OCC, _UNK = 1, 2, 0


@numba.njit(cache=True)
def _visible(p, room, boxes, pos, cam_rot, intr):
    for a in range(3):
        if p[a] < -1e-9 or p[a] > room[a] + 1e-9:
            return False
    rel = p - pos
    x = rel[0] * cam_rot[0, 0] + rel[1] * cam_rot[1, 0] + rel[2] * cam_rot[2, 0]
    y = rel[0] * cam_rot[0, 1] + rel[1] * cam_rot[1, 1] + rel[2] * cam_rot[2, 1]
    z = rel[0] * cam_rot[0, 2] + rel[1] * cam_rot[1, 2] + rel[2] * cam_rot[2, 2]
    if z <= 1e-9:
        return False
    u = intr[0] * x / z + intr[2]
    v = intr[1] * y / z + intr[3]
    if u < -0.5 or u >= intr[4] - 0.5 or v < -0.5 or v >= intr[5] - 0.5:
        return False
    for b in range(boxes.shape[0]):
        t0 = 1e-9
        t1 = 1.0 - 1e-9
        hit = True
        for a in range(3):
            lo = boxes[b, a]
            hi = boxes[b, a + 3]
            if rel[a] == 0.0:
                if pos[a] <= lo or pos[a] >= hi:
                    hit = False
                    break
            else:
                ta = (lo - pos[a]) / rel[a]
                tb = (hi - pos[a]) / rel[a]
                if ta > tb:
                    ta, tb = tb, ta
                t0 = max(t0, ta)
                t1 = min(t1, tb)
                if t0 >= t1:
                    hit = False
                    break
        if hit:
            return False
    return True


@numba.njit(cache=True)
def _in_solid(q, room, boxes):
    for a in range(3):
        if q[a] < 0.0 or q[a] > room[a]:
            return True
    for b in range(boxes.shape[0]):
        inside = True
        for a in range(3):
            if q[a] < boxes[b, a] or q[a] > boxes[b, a + 3]:
                inside = False
                break
        if inside:
            return True
    return False


@numba.njit(cache=True)
def _top_above(x, y, z, room, boxes):
    """Height where a vertical line leaves the solid containing (x, y, z); -1 if it never does."""
    if x < 0.0 or x > room[0] or y < 0.0 or y > room[1] or z >= room[2]:
        return -1.0
    if z < 0.0:
        z = 0.0
    moved = True
    while moved:
        moved = False
        for b in range(boxes.shape[0]):
            if (boxes[b, 0] <= x <= boxes[b, 3] and boxes[b, 1] <= y <= boxes[b, 4]
                    and boxes[b, 2] <= z + 1e-9 and boxes[b, 5] > z):
                z = boxes[b, 5]
                moved = True
    if z >= room[2] - 1e-9:
        return -1.0
    return z


@numba.njit(cache=True)
def _supported_from_top(x, y, z, room, boxes, pos, cam_rot, intr):
    top = _top_above(x, y, z, room, boxes)
    if top < 0.0:
        return _UNK
    s = np.array([x, y, top + 1e-4])
    if _visible(s, room, boxes, pos, cam_rot, intr):
        return _OCC
    return _UNK


@numba.njit(cache=True)
def _hidden_free(q, step, room, boxes, pos, cam_rot, intr):
    x, y = q[0], q[1]
    z = q[2]
    # next solid above, along the vertical
    zb = room[2]
    for b in range(boxes.shape[0]):
        if boxes[b, 0] <= x <= boxes[b, 3] and boxes[b, 1] <= y <= boxes[b, 4] and boxes[b, 2] > z:
            zb = min(zb, boxes[b, 2])
    p = np.empty(3)
    p[0] = x
    p[1] = y
    zz = z + step
    while zz < zb:
        p[2] = zz
        if _visible(p, room, boxes, pos, cam_rot, intr):
            return _UNK
        zz += step
    if zb >= room[2]:
        return _UNK
    p[2] = zb - 1e-4
    if _visible(p, room, boxes, pos, cam_rot, intr):
        return _UNK
    return _supported_from_top(x, y, zb, room, boxes, pos, cam_rot, intr)


@numba.njit(cache=True)
def _face_seen(q, h, a, level, lo, hi, room, boxes, pos, cam_rot, intr):
    """Is any of a 3x3 sample grid on the face patch inside the cube around ``q`` visible?"""
    t1 = (a + 1) % 3
    t2 = (a + 2) % 3
    s = np.empty(3)
    s[a] = level
    a1 = max(q[t1] - h, lo[t1])
    b1 = min(q[t1] + h, hi[t1])
    a2 = max(q[t2] - h, lo[t2])
    b2 = min(q[t2] + h, hi[t2])
    for i in range(3):
        s[t1] = a1 + (b1 - a1) * (0.05 + 0.45 * i)
        for j in range(3):
            s[t2] = a2 + (b2 - a2) * (0.05 + 0.45 * j)
            if _visible(s, room, boxes, pos, cam_rot, intr):
                return True
    return False


@numba.njit(cache=True)
def _classify(q, h, room, boxes, pos, cam_rot, intr):
    touches = False
    for a in range(3):
        if q[a] - h < 0.0 or q[a] + h > room[a]:
            touches = True
    for b in range(boxes.shape[0]):
        inter = True
        for a in range(3):
            if not (q[a] + h > boxes[b, a] and q[a] - h < boxes[b, a + 3]):
                inter = False
                break
        if inter:
            touches = True
    solid = _in_solid(q, room, boxes)
    if touches:
        lo = np.empty(3)
        hi = np.empty(3)
        # room faces crossing the cube
        for a in range(3):
            for side in range(2):
                plane = 0.0 if side == 0 else room[a]
                if (side == 0 and q[a] - h < 0.0 <= q[a] + h) or \
                        (side == 1 and q[a] - h <= room[a] < q[a] + h):
                    lo[:] = 0.0
                    hi[:] = room
                    if _face_seen(q, h, a, plane + (1e-4 if side == 0 else -1e-4), lo, hi,
                                  room, boxes, pos, cam_rot, intr):
                        return _OCC
        # box faces crossing the cube
        for b in range(boxes.shape[0]):
            inter = True
            for a in range(3):
                if not (q[a] + h > boxes[b, a] and q[a] - h < boxes[b, a + 3]):
                    inter = False
                    break
            if not inter:
                continue
            for a in range(3):
                for side in range(2):
                    plane = boxes[b, a] if side == 0 else boxes[b, a + 3]
                    if not (q[a] - h <= plane <= q[a] + h):
                        continue
                    lo[:] = boxes[b, :3]
                    hi[:] = boxes[b, 3:]
                    if _face_seen(q, h, a, plane + (-1e-4 if side == 0 else 1e-4), lo, hi,
                                  room, boxes, pos, cam_rot, intr):
                        return _OCC
    if not solid and _visible(q, room, boxes, pos, cam_rot, intr):
        return _FREE
    if solid:
        return _supported_from_top(q[0], q[1], q[2], room, boxes, pos, cam_rot, intr)
    return _hidden_free(q, h, room, boxes, pos, cam_rot, intr)


@numba.njit(cache=True)
def _lattice_class(cache, key, p, vs, room, boxes, pos, cam_rot, intr):
    """Cell class at lattice point ``key`` (half-voxel steps around ``p``), memoised."""
    v = cache[key[0], key[1], key[2]]
    if v < 0:
        q = np.empty(3)
        for a in range(3):
            q[a] = p[a] + (key[a] - cache.shape[a] // 2) * vs / 2.0
        v = _classify(q, vs / 2.0, room, boxes, pos, cam_rot, intr)
        cache[key[0], key[1], key[2]] = v
    return v


@numba.njit(cache=True)
def _pose_label(cache, base, p, vs, sup, sup_ptr, surf, surf_ptr, fs, fs_ptr, f, nrot,
                t_lo, t_hi, u_max, room, boxes, pos, cam_rot, intr):
    best = 0.0
    unk = 0.0
    key = np.empty(3, dtype=np.int64)
    for r in range(nrot):
        failed = False
        undecided = False
        for i in range(sup_ptr[f, r, 0], sup_ptr[f, r, 1]):
            for a in range(3):
                key[a] = base[a] + 2 * sup[i, a]
            cls = _lattice_class(cache, key, p, vs, room, boxes, pos, cam_rot, intr)
            if cls == _FREE:
                failed = True
                break
            if cls == _UNK:
                undecided = True
        if not failed:
            for i in range(surf_ptr[f, r, 0], surf_ptr[f, r, 1]):
                for a in range(3):
                    key[a] = base[a] + 2 * surf[i, a]
                cls = _lattice_class(cache, key, p, vs, room, boxes, pos, cam_rot, intr)
                if cls == _OCC:
                    failed = True
                    break
                if cls == _UNK:
                    undecided = True
        if failed:
            continue
        if undecided:
            unk = 1.0
            continue
        n = fs_ptr[f, r, 1] - fs_ptr[f, r, 0]
        nfree = 0
        nunk = 0
        for i in range(fs_ptr[f, r, 0], fs_ptr[f, r, 1]):
            for a in range(3):
                key[a] = base[a] + 2 * fs[i, a]
            cls = _lattice_class(cache, key, p, vs, room, boxes, pos, cam_rot, intr)
            if cls == _FREE:
                nfree += 1
            elif cls == _UNK:
                nunk += 1
        best = max(best, nfree / n)
        unk = max(unk, nunk / n)
    if best >= t_hi:
        return 1
    if best <= t_lo and unk <= u_max:
        return 0
    return -1


@numba.njit(cache=True)
def _oracle_kernel(points, normals, vs, nrots, sup, sup_ptr, surf, surf_ptr, fs, fs_ptr,
                   t_lo, t_hi, u_max, room, boxes, pos, cam_rot, intr, band, reach):
    nf = nrots.shape[0]
    out = np.full((points.shape[0], nf), -1, dtype=np.int8)
    margin = np.zeros((points.shape[0], nf), dtype=np.bool_)
    cache = np.empty((4 * reach[0] + 2 * band + 1, 4 * reach[1] + 2 * band + 1,
                      4 * reach[2] + 2 * band + 1), dtype=np.int8)
    base = np.empty(3, dtype=np.int64)
    for k in range(points.shape[0]):
        p = points[k]
        n = normals[k]
        cache[:] = -1
        # in-plane tangents of an axis-aligned face
        ax = 0
        for a in range(3):
            if abs(n[a]) > abs(n[ax]):
                ax = a
        t1 = (ax + 1) % 3
        t2 = (ax + 2) % 3
        side = 2 * band + 1
        for f in range(nf):
            first = -2
            for trial in range(side * side):
                for a in range(3):
                    base[a] = cache.shape[a] // 2
                base[t1] += trial % side - band
                base[t2] += trial // side - band
                lab = _pose_label(cache, base, p, vs, sup, sup_ptr, surf, surf_ptr, fs,
                                  fs_ptr, f, nrots[f], t_lo, t_hi, u_max, room, boxes,
                                  pos, cam_rot, intr)
                if first == -2:
                    first = lab
                elif lab != first:
                    margin[k, f] = True
                    break
            if not margin[k, f]:
                out[k, f] = first
    return out, margin


def _pack_offsets(bank: Sequence[PoseFilter]):
    sup, surf, fs = [], [], []
    nf = len(bank)
    ptrs = {k: np.zeros((nf, 4, 2), dtype=np.int64) for k in ("sup", "surf", "fs")}
    nrots = np.zeros(nf, dtype=np.int64)
    for f, pose in enumerate(bank):
        rots = pose.rotations()
        nrots[f] = len(rots)
        for r, rp in enumerate(rots):
            for key, store, cells in (("sup", sup, rp.support_cells),
                                      ("surf", surf, rp.surface_cells),
                                      ("fs", fs, rp.freespace_cells)):
                start = sum(len(c) for c in store)
                store.append(cells)
                ptrs[key][f, r] = (start, start + len(cells))
    cat = lambda lst: (np.ascontiguousarray(np.concatenate(lst), dtype=np.int64) if lst
                       else np.zeros((0, 3), np.int64))
    return nrots, cat(sup), ptrs["sup"], cat(surf), ptrs["surf"], cat(fs), ptrs["fs"]


@dataclass(frozen=True)
class OracleResult:
    maps: Dict[str, AffordanceMap]   # UNKNOWN inside the margin band and at unevaluated pixels
    margin: Dict[str, np.ndarray]    # True where the oracle abstains (boundary band or not sampled)


def oracle_affordances(spec: SceneSpec, filter_bank: Sequence[PoseFilter],
                       intrinsics: Optional[CameraIntrinsics] = None, *, voxel_size: float = 0.10,
                       thresholds: Thresholds = Thresholds(), stride: int = 1,
                       band: int = 2) -> OracleResult:
    """Per-pixel labels from the pose templates evaluated on the exact scene.

    Only every ``stride``-th pixel in each direction is evaluated; the others
    are reported as margin.  ``band`` is the anchor spread in half voxels
    (2 abstains within one voxel of a decision boundary).
    """
    if intrinsics is not None and intrinsics != spec.intrinsics:
        spec = SceneSpec(spec.room, spec.camera_position, spec.yaw, spec.pitch, intrinsics,
                         spec.boxes, spec.noise_sigma, spec.dropout, spec.seed)
    t, points, normals, _ = _ray_cast(spec)
    k = spec.intrinsics
    h, w = t.shape
    sel = np.zeros((h, w), bool)
    sel[::stride, ::stride] = True
    idx = np.flatnonzero(sel)
    nrots, sup, sup_ptr, surf, surf_ptr, fs, fs_ptr = _pack_offsets(filter_bank)
    intr = np.array([k.fx, k.fy, k.cx, k.cy, k.width, k.height], float)
    labels, margin = _oracle_kernel(
        points.reshape(-1, 3)[idx], normals.reshape(-1, 3)[idx], float(voxel_size), nrots,
        sup, sup_ptr, surf, surf_ptr, fs, fs_ptr, thresholds.low, thresholds.high,
        thresholds.max_unknown, np.asarray(spec.room, float), spec.box_array(),
        np.asarray(spec.camera_position, float), spec.camera_axes(), intr,
        int(band), np.abs(np.concatenate([sup, surf, fs])).max(axis=0))
    maps, margins = {}, {}
    for f, pose in enumerate(filter_bank):
        lab = np.full(h * w, Label.UNKNOWN, dtype=np.int8)
        lab[idx] = labels[:, f]
        m = np.ones(h * w, bool)
        m[idx] = margin[:, f]
        maps[pose.name] = AffordanceMap(lab.reshape(h, w), pose.name, "oracle")
        margins[pose.name] = m.reshape(h, w)
    return OracleResult(maps, margins)


def agreement_counts(generated: AffordanceMap, oracle: OracleResult) -> Tuple[int, int]:
    """(pixels compared, pixels agreeing) outside the oracle's margin band."""
    a = generated.affordance
    keep = ~oracle.margin[a]
    agree = np.asarray(generated.labels)[keep] == oracle.maps[a].labels[keep]
    return int(keep.sum()), int(agree.sum())
