"""Pose-filter affordance labels from occupancy grids.

Each pose is a rigid voxel template made of three kinds of criteria cells,
all given as offsets from the contact joint:

* support cells must be OCCUPIED (the joint's support and any other body
  contact such as the feet),
* surface cells must be FREE (the supporting surface faces the body),
* freespace cells should be FREE (room for the body).

The response at a voxel is gated: if any support or surface cell is known
to fail, the response is 0 with no uncertainty; if the gate cannot be
decided because some of its cells are UNKNOWN the response is 0 and fully
uncertain; otherwise it is the fraction of freespace cells that are FREE,
and the uncertainty is the fraction that are UNKNOWN.  The pose is tried
at four yaw rotations and the strongest response wins.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FilterLargerThanGrid, InvalidDims
from .geometry import DepthMap, PointCloud, backproject, densify, estimate_frame
from .voxels import Cell, VoxelGrid, fill_below, voxelize

Box = Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]  # inclusive ranges

AFFORDANCES = ("standing", "sitting_upright", "lying", "reach_hand", "reach_feet")


class Label(IntEnum):
    UNKNOWN = -1
    NOT = 0
    SUPPORTS = 1


def _box_cells(boxes: Sequence[Box]) -> np.ndarray:
    out = []
    for (x0, x1), (y0, y1), (z0, z1) in boxes:
        g = np.mgrid[x0:x1 + 1, y0:y1 + 1, z0:z1 + 1].reshape(3, -1).T
        out.append(g)
    if not out:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(out).astype(np.int64)


def _rotate_box(box: Box, k: int) -> Box:
    (x0, x1), (y0, y1), z = box
    for _ in range(k % 4):
        (x0, x1), (y0, y1) = (-y1, -y0), (x0, x1)
    return ((x0, x1), (y0, y1), z)


def _rotate_point(p, k: int):
    x, y, z = p
    for _ in range(k % 4):
        x, y = -y, x
    return (x, y, z)


@dataclass(frozen=True)
class PoseFilter:
    """Voxel template for one pose; boxes are inclusive offset ranges in body coordinates."""

    name: str
    freespace_boxes: Tuple[Box, ...]
    support_boxes: Tuple[Box, ...]
    surface_boxes: Tuple[Box, ...]
    contact_joint: Tuple[int, int, int]
    orientation_sensitive: bool = True

    def __post_init__(self):
        sets = {}
        for kind in ("freespace", "support", "surface"):
            cells = _box_cells(getattr(self, f"{kind}_boxes"))
            sets[kind] = set(map(tuple, cells.tolist()))
            if len(sets[kind]) != len(cells):
                raise ValueError(f"{self.name}: overlapping {kind} boxes")
        fs, sup, surf = sets["freespace"], sets["support"], sets["surface"]
        if fs & sup or surf & sup:
            raise ValueError(f"{self.name}: support cells overlap free cells")
        if tuple(self.contact_joint) not in sup:
            raise ValueError(f"{self.name}: contact joint is not a support cell")

    @property
    def freespace_cells(self) -> np.ndarray:
        return _box_cells(self.freespace_boxes)

    @property
    def support_cells(self) -> np.ndarray:
        return _box_cells(self.support_boxes)

    @property
    def surface_cells(self) -> np.ndarray:
        return _box_cells(self.surface_boxes)

    def rotated(self, k: int) -> "PoseFilter":
        """The template turned by ``k`` quarter turns about the up axis."""
        rot = lambda boxes: tuple(_rotate_box(b, k) for b in boxes)
        return PoseFilter(self.name, rot(self.freespace_boxes), rot(self.support_boxes),
                          rot(self.surface_boxes), _rotate_point(self.contact_joint, k),
                          self.orientation_sensitive)

    def relative(self) -> "PoseFilter":
        """The template re-expressed with the contact joint at the origin."""
        cx, cy, cz = self.contact_joint
        sh = lambda boxes: tuple(((x0 - cx, x1 - cx), (y0 - cy, y1 - cy), (z0 - cz, z1 - cz))
                                 for (x0, x1), (y0, y1), (z0, z1) in boxes)
        return PoseFilter(self.name, sh(self.freespace_boxes), sh(self.support_boxes),
                          sh(self.surface_boxes), (0, 0, 0), self.orientation_sensitive)

    def rotations(self) -> List["PoseFilter"]:
        """Contact-relative templates for each distinct yaw (4, or 1 if symmetric)."""
        return list(_rotations(self))

    def extent(self) -> np.ndarray:
        """Bounding box span (cells) of all criteria over all rotations."""
        return _extent(self).copy()


@functools.lru_cache(maxsize=256)
def _rotations(pose: PoseFilter) -> Tuple[PoseFilter, ...]:
    ks = range(4) if pose.orientation_sensitive else range(1)
    return tuple(pose.rotated(k).relative() for k in ks)


@functools.lru_cache(maxsize=256)
def _extent(pose: PoseFilter) -> np.ndarray:
    lo = np.zeros(3, int)
    hi = np.zeros(3, int)
    for f in [pose.rotated(k).relative() for k in range(4)]:
        cells = np.concatenate([f.freespace_cells, f.support_cells, f.surface_cells])
        lo = np.minimum(lo, cells.min(axis=0))
        hi = np.maximum(hi, cells.max(axis=0))
    return hi - lo + 1


@dataclass(frozen=True)
class HumanDims:
    """Body measurements in metres used to build the pose templates."""

    height: float = 1.8
    shoulder_width: float = 0.5
    seat_height_min: float = 0.4
    seat_height_max: float = 0.6
    knee_forward: float = 0.4
    lying_length: float = 1.8
    lying_width: float = 0.6
    lying_clearance: float = 0.5
    reach_radius: float = 0.7
    hand_height: float = 1.0
    foot_reach: float = 0.3


def build_filter_bank(dims: HumanDims = HumanDims(), voxel_size: float = 0.10) -> List[PoseFilter]:
    """The five pose templates: standing, sitting, lying and hand/foot reach."""
    vs = voxel_size
    up = lambda m: int(math.ceil(m / vs - 1e-9))
    near = lambda m: int(math.floor(m / vs + 0.5))
    H = up(dims.height)
    r = int(math.floor(dims.shoulder_width / 2 / vs + 1e-9))
    seat = near((dims.seat_height_min + dims.seat_height_max) / 2)
    knee = near(dims.knee_forward)
    torso = up(dims.height / 2)
    L, W, clear = up(dims.lying_length), up(dims.lying_width), up(dims.lying_clearance)
    hand_dx = near(dims.reach_radius) - r
    hand_h = near(dims.hand_height)
    foot_dx = near(dims.foot_reach)
    quantized = dict(height=H, half_shoulder=r, seat=seat, knee=knee, lying_length=L,
                     lying_width=W, lying_clearance=clear, hand_forward=hand_dx,
                     hand_height=hand_h, foot_reach=foot_dx)
    bad = [k for k, v in quantized.items() if v < 1]
    if bad:
        raise InvalidDims(f"dimensions below one voxel: {', '.join(bad)}")
    if knee < 2 or hand_dx < 3 or foot_dx < 2 or hand_h < 2:
        raise InvalidDims("reach or knee offsets too short for the template layout")

    standing = PoseFilter(
        "standing",
        freespace_boxes=(((-r, r), (-r, r), (1, H)),),
        support_boxes=(((0, 0), (0, 0), (0, 0)),),
        surface_boxes=(((0, 0), (0, 0), (1, 1)),),
        contact_joint=(0, 0, 0),
        orientation_sensitive=False,
    )
    sitting = PoseFilter(
        "sitting_upright",
        freespace_boxes=(((-1, 1), (-r, r), (1, torso)),
                         ((2, knee), (-1, 1), (-(seat - 1), 2))),
        support_boxes=(((0, 0), (0, 0), (0, 0)), ((knee, knee), (0, 0), (-seat, -seat))),
        surface_boxes=(((0, 0), (0, 0), (1, 1)), ((2, 2), (0, 0), (-1, -1))),
        contact_joint=(0, 0, 0),
    )
    x0, y0 = -(L // 2), -(W // 2)
    footprint = ((x0, x0 + L - 1), (y0, y0 + W - 1))
    lying = PoseFilter(
        "lying",
        freespace_boxes=((*footprint, (1, clear)),),
        support_boxes=((*footprint, (0, 0)),),
        surface_boxes=(((0, 0), (0, 0), (1, 1)),),
        contact_joint=(0, 0, 0),
    )
    reach_hand = PoseFilter(
        "reach_hand",
        freespace_boxes=(((-1, 1), (-r, r), (1, H)),
                         ((2, hand_dx - 1), (-1, 1), (hand_h - 1, hand_h + 1))),
        support_boxes=(((0, 0), (0, 0), (0, 0)), ((hand_dx, hand_dx), (0, 0), (hand_h, hand_h))),
        surface_boxes=(((hand_dx - 1, hand_dx - 1), (0, 0), (hand_h, hand_h)),),
        contact_joint=(hand_dx, 0, hand_h),
    )
    reach_feet = PoseFilter(
        "reach_feet",
        freespace_boxes=(((-1, 1), (-r, r), (1, H)),
                         ((2, foot_dx), (-1, 1), (1, 2))),
        support_boxes=(((0, 0), (0, 0), (0, 0)), ((foot_dx, foot_dx), (0, 0), (0, 0))),
        surface_boxes=(((0, 0), (0, 0), (1, 1)), ((foot_dx, foot_dx), (0, 0), (1, 1))),
        contact_joint=(foot_dx, 0, 0),
    )
    return [standing, sitting, lying, reach_hand, reach_feet]


def _summed_volume(a: np.ndarray) -> np.ndarray:
    # int32 holds the count of any grid below 2^31 cells
    s = np.zeros(tuple(n + 1 for n in a.shape), dtype=np.int32)
    s[1:, 1:, 1:] = a.astype(np.int32).cumsum(0).cumsum(1).cumsum(2)
    return s


def _box_count(s: np.ndarray, box: Box, pad: np.ndarray, shape) -> np.ndarray:
    lo = [pad[a] + box[a][0] for a in range(3)]
    hi = [pad[a] + box[a][1] + 1 for a in range(3)]
    out = np.zeros(shape, dtype=np.int32)
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                sx = hi[0] if cx else lo[0]
                sy = hi[1] if cy else lo[1]
                sz = hi[2] if cz else lo[2]
                corner = s[sx:sx + shape[0], sy:sy + shape[1], sz:sz + shape[2]]
                if (3 - cx - cy - cz) % 2:
                    out -= corner
                else:
                    out += corner
    return out


def _count(s, boxes, pad, shape):
    total = np.zeros(shape, dtype=np.int32)
    for b in boxes:
        total += _box_count(s, b, pad, shape)
    return total


def convolve_filter(grid: VoxelGrid, pose: PoseFilter) -> Tuple[np.ndarray, np.ndarray]:
    """Per-voxel (response, unknown_fraction) for ``pose`` anchored at its contact joint.

    Cells beyond the grid boundary count as UNKNOWN.  Counts come from
    summed-volume tables, so the result is exact.
    """
    cells = np.asarray(grid.cells)
    ext = pose.extent()
    if np.any(ext > np.array(cells.shape)):
        raise FilterLargerThanGrid(f"{pose.name} spans {tuple(ext)} cells, grid is {cells.shape}")
    rots = pose.rotations()
    allc = np.concatenate([np.concatenate([f.freespace_cells, f.support_cells, f.surface_cells])
                           for f in rots])
    pad = np.abs(allc).max(axis=0)
    padded = np.pad(cells, [(p, p) for p in pad], constant_values=Cell.UNKNOWN)
    s_occ = _summed_volume(padded == Cell.OCCUPIED)
    s_free = _summed_volume(padded == Cell.FREE)
    s_unk = _summed_volume(padded == Cell.UNKNOWN)
    shape = cells.shape
    best = np.zeros(shape)
    unknown = np.zeros(shape)
    for f in rots:
        n_sup = len(f.support_cells)
        n_surf = len(f.surface_cells)
        n_fs = len(f.freespace_cells)
        sup_occ = _count(s_occ, f.support_boxes, pad, shape)
        sup_free = _count(s_free, f.support_boxes, pad, shape)
        surf_free = _count(s_free, f.surface_boxes, pad, shape)
        surf_occ = _count(s_occ, f.surface_boxes, pad, shape)
        fs_free = _count(s_free, f.freespace_boxes, pad, shape)
        fs_unk = _count(s_unk, f.freespace_boxes, pad, shape)
        failed = (sup_free > 0) | (surf_occ > 0)
        undecided = ~failed & ((sup_occ < n_sup) | (surf_free < n_surf))
        passed = ~failed & ~undecided
        resp = np.where(passed, fs_free / n_fs, 0.0)
        unk = np.where(passed, fs_unk / n_fs, np.where(undecided, 1.0, 0.0))
        best = np.maximum(best, resp)
        unknown = np.maximum(unknown, unk)
    return best, unknown


@dataclass(frozen=True)
class Thresholds:
    low: float = 0.2
    high: float = 0.95
    max_unknown: float = 0.1


def label_voxels(response: np.ndarray, unknown_fraction: np.ndarray,
                 thresholds: Thresholds = Thresholds()) -> np.ndarray:
    """Tri-state labels: strong response supports, weak and well-observed does not."""
    out = np.full(np.shape(response), Label.UNKNOWN, dtype=np.int8)
    out[(response <= thresholds.low) & (unknown_fraction <= thresholds.max_unknown)] = Label.NOT
    out[response >= thresholds.high] = Label.SUPPORTS
    return out


@dataclass(frozen=True)
class AffordanceMap:
    """Per-pixel affordance output; ``scores`` is set for soft predictions."""

    labels: np.ndarray
    affordance: str
    source: str = "generated"
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        if self.scores is not None and np.shape(self.scores) != labels.shape:
            raise ValueError("scores and labels must have the same shape")

    @classmethod
    def from_scores(cls, scores: np.ndarray, affordance: str, threshold: float = 0.5):
        scores = np.asarray(scores, float)
        labels = np.where(scores >= threshold, Label.SUPPORTS, Label.NOT).astype(np.int8)
        return cls(labels, affordance, "predicted", scores)

    @property
    def shape(self):
        return np.shape(self.labels)


def backproject_labels(voxel_labels: np.ndarray, cloud: PointCloud, depth: DepthMap,
                       grid: VoxelGrid, affordance: str = "") -> AffordanceMap:
    """Give each valid pixel the label of the voxel holding its 3D point."""
    labels = np.full(depth.shape, Label.UNKNOWN, dtype=np.int8)
    idx = grid.camera_to_index(cloud.points)
    ok = grid.in_bounds(idx)
    flat = labels.reshape(-1)
    flat[cloud.pixel_index[ok]] = voxel_labels[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
    return AffordanceMap(labels, affordance, "generated")


def apply_floor_filter(amap: AffordanceMap, floor_mask: np.ndarray) -> AffordanceMap:
    """Standing NOT labels on known floor pixels contradict the floor label; mark them UNKNOWN."""
    if amap.affordance != "standing":
        return amap
    labels = amap.labels.copy()
    labels[np.asarray(floor_mask, bool) & (labels == Label.NOT)] = Label.UNKNOWN
    return AffordanceMap(labels, amap.affordance, amap.source, amap.scores)


@dataclass(frozen=True)
class LabelConfig:
    voxel_size: float = 0.10
    margin: float = 0.5
    thresholds: Thresholds = field(default_factory=Thresholds)
    human: HumanDims = field(default_factory=HumanDims)
    seed: int = 0
    ransac_iterations: int = 1000
    min_angle_from_down: float = 45.0
    densify: bool = True        # interpolate surface samples between neighbouring pixels


def generate_labels(depth: DepthMap, config: LabelConfig = LabelConfig(),
                    floor_mask: Optional[np.ndarray] = None) -> Tuple[Dict[str, AffordanceMap], dict]:
    """Depth map to one tri-state label map per pose, plus provenance.

    Raises ``DegenerateScene`` when no Manhattan frame can be recovered.
    """
    cloud = backproject(depth)
    frame = estimate_frame(cloud, floor_mask, seed=config.seed,
                           iterations=config.ransac_iterations)
    bank = build_filter_bank(config.human, config.voxel_size)
    need = np.max([f.extent() for f in bank], axis=0)
    surface = densify(cloud, config.voxel_size / 3) if config.densify else cloud
    grid = voxelize(surface, frame, config.voxel_size, margin=config.margin, min_dims=need)
    grid = fill_below(grid, surface, frame, min_angle_from_down=config.min_angle_from_down)
    maps = {}
    for pose in bank:
        resp, unk = convolve_filter(grid, pose)
        vlab = label_voxels(resp, unk, config.thresholds)
        amap = backproject_labels(vlab, cloud, depth, grid, pose.name)
        if floor_mask is not None:
            amap = apply_floor_filter(amap, floor_mask)
        maps[pose.name] = amap
    info = {
        "frame": {"gravity": frame.gravity.tolist(), "axis2": frame.axis2.tolist(),
                  "axis3": frame.axis3.tolist()},
        "grid": {"dims": list(grid.dims), "voxel_size": grid.voxel_size,
                 "origin": grid.origin.tolist(), "counts": grid.counts(),
                 "fill_conflicts": grid.fill_conflicts},
        "points": len(cloud),
    }
    return maps, info
