"""Gravity-aligned tri-state occupancy grids built from a single depth view."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional, Sequence

import numba
import numpy as np

from .errors import EmptyCloud, FrameMismatch
from .geometry import ManhattanFrame, PointCloud


class Cell(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@dataclass(frozen=True)
class VoxelGrid:
    cells: np.ndarray          # (nx, ny, nz) uint8 of Cell values
    voxel_size: float
    origin: np.ndarray         # world position of the (0, 0, 0) corner
    frame: ManhattanFrame
    up_axis: int = 2
    fill_conflicts: int = 0    # columns whose fill stopped at a FREE cell

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if cells.ndim != 3 or min(cells.shape) < 1:
            raise ValueError("cells must be a non-empty 3D array")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if cells.max(initial=0) > Cell.OCCUPIED:
            raise ValueError("unknown cell state")
        cells.setflags(write=False)
        origin = np.asarray(self.origin, float).copy()
        origin.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self):
        return self.cells.shape

    def counts(self) -> dict:
        return {c.name: int(np.count_nonzero(self.cells == c)) for c in Cell}

    def world_to_index(self, world: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(world, float) - self.origin) / self.voxel_size).astype(np.int64)

    def camera_to_index(self, points: np.ndarray) -> np.ndarray:
        return self.world_to_index(self.frame.to_world(points))

    def in_bounds(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=-1)

    def cell_centers(self, idx: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(idx, float) + 0.5) * self.voxel_size


def _plane_anchor(coord: np.ndarray, voxel_size: float) -> Optional[float]:
    """Position of the most populated plane among ``coord`` values."""
    if len(coord) == 0:
        return None
    width = voxel_size / 20.0
    bins = np.floor(coord / width).astype(np.int64)
    vals, counts = np.unique(bins, return_counts=True)
    best = vals[np.argmax(counts)]
    return float(np.median(coord[np.abs(bins - best) <= 1]))


@numba.njit(cache=True)
def _carve_rays(cells, start, ends):
    nx, ny, nz = cells.shape
    dims = np.array([nx, ny, nz], dtype=np.float64)
    for r in range(ends.shape[0]):
        s = start
        e = ends[r]
        d = e - s
        t0 = 0.0
        t1 = 1.0
        skip = False
        for a in range(3):
            if d[a] == 0.0:
                if s[a] < 0.0 or s[a] >= dims[a]:
                    skip = True
            else:
                ta = (0.0 - s[a]) / d[a]
                tb = (dims[a] - s[a]) / d[a]
                t0 = max(t0, min(ta, tb))
                t1 = min(t1, max(ta, tb))
        if skip or t0 >= t1:
            continue
        end = np.empty(3, dtype=np.int64)
        cur = np.empty(3, dtype=np.int64)
        step = np.zeros(3, dtype=np.int64)
        tmax = np.empty(3)
        tdelta = np.empty(3)
        for a in range(3):
            end[a] = min(max(int(math.floor(e[a])), 0), int(dims[a]) - 1)
            p = s[a] + (t0 + 1e-9) * d[a]
            cur[a] = min(max(int(math.floor(p)), 0), int(dims[a]) - 1)
            if d[a] > 0:
                step[a] = 1
                tmax[a] = (cur[a] + 1.0 - s[a]) / d[a]
                tdelta[a] = 1.0 / d[a]
            elif d[a] < 0:
                step[a] = -1
                tmax[a] = (cur[a] - s[a]) / d[a]
                tdelta[a] = -1.0 / d[a]
            else:
                tmax[a] = np.inf
                tdelta[a] = np.inf
        while True:
            if cur[0] == end[0] and cur[1] == end[1] and cur[2] == end[2]:
                break
            cells[cur[0], cur[1], cur[2]] = 1
            a = 0
            if tmax[1] < tmax[a]:
                a = 1
            if tmax[2] < tmax[a]:
                a = 2
            if tmax[a] > t1:
                break
            cur[a] += step[a]
            if cur[a] < 0 or cur[a] >= dims[a]:
                break
            tmax[a] += tdelta[a]


def _carve_projective(cells: np.ndarray, origin: np.ndarray, voxel_size: float,
                      frame: ManhattanFrame, cloud: PointCloud) -> None:
    """Mark FREE every cell whose centre lies in front of the surface seen through its pixel.

    The centre is projected to the nearest pixel with a valid point (among
    the four around the projection) and compared against the tangent plane
    of that pixel's point along the centre's viewing ray.
    """
    intr = cloud.intrinsics
    h, w = cloud.image_shape
    first = np.unique(cloud.pixel_index, return_index=True)[1]
    P = np.zeros((h * w, 3))
    N = np.zeros((h * w, 3))
    V = np.zeros(h * w, bool)
    P[cloud.pixel_index[first]] = cloud.points[first]
    N[cloud.pixel_index[first]] = cloud.normals[first]
    V[cloud.pixel_index[first]] = True
    grid_idx = np.indices(cells.shape).reshape(3, -1).T
    c = (origin + (grid_idx + 0.5) * voxel_size) @ frame.rotation   # world -> camera
    z = c[:, 2]
    ahead = z > 1e-9
    zs = np.where(ahead, z, 1.0)
    u = intr.fx * c[:, 0] / zs + intr.cx
    v = intr.fy * c[:, 1] / zs + intr.cy
    inside = ahead & (u >= -0.5) & (u < w - 0.5) & (v >= -0.5) & (v < h - 0.5)
    u0, v0 = np.floor(u).astype(np.int64), np.floor(v).astype(np.int64)
    cand = []
    for du in (0, 1):
        for dv in (0, 1):
            cu = np.clip(u0 + du, 0, w - 1)
            cv = np.clip(v0 + dv, 0, h - 1)
            cand.append((cu - u) ** 2 + (cv - v) ** 2 + np.where(V[cv * w + cu], 0.0, np.inf))
            cand.append(cv * w + cu)
    dist = np.stack(cand[0::2], axis=1)
    pix = np.stack(cand[1::2], axis=1)
    best = np.argmin(dist, axis=1)
    ok = inside & np.isfinite(dist[np.arange(len(best)), best])
    k = pix[np.arange(len(best)), best]
    p, n = P[k], N[k]
    nc = np.einsum("ij,ij->i", n, c)
    ray = np.linalg.norm(c, axis=1)
    grazing = np.abs(nc) < 0.05 * np.maximum(ray, 1e-12)
    t = np.where(grazing, p[:, 2] / zs, np.einsum("ij,ij->i", n, p) / np.where(grazing, 1.0, nc))
    free = ok & (t > 1.0)
    cells.reshape(-1)[free] = Cell.FREE


def voxelize(cloud: PointCloud, frame: ManhattanFrame, voxel_size: float = 0.10, *,
             margin: float = 0.5, min_dims: Sequence[int] = (1, 1, 1),
             align_to_planes: bool = True) -> VoxelGrid:
    """Single-view occupancy grid in the Manhattan frame.

    Cells holding at least one point are OCCUPIED.  Cells in front of the
    observed surface are FREE: when the cloud carries its camera intrinsics a
    cell is FREE if its centre lies in front of the surface seen through the
    pixel it projects to; otherwise every cell crossed by a camera ray before
    the ray's end point is FREE.  Everything else (occluded or outside the
    view) stays UNKNOWN.

    The grid covers the point bounding box plus ``margin``.  With
    ``align_to_planes`` the grid phase along each axis is shifted so the
    most populated plane perpendicular to that axis falls on cell centres.
    ``min_dims`` grows the grid (upwards along z, symmetrically along x and
    y) so large filters still fit.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot voxelize an empty cloud")
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pw = frame.to_world(cloud.points)
    nw = frame.to_world(cloud.normals)
    lo = pw.min(axis=0) - margin
    hi = pw.max(axis=0) + margin
    origin = np.empty(3)
    for a in range(3):
        anchor = None
        if align_to_planes:
            anchor = _plane_anchor(pw[np.abs(nw[:, a]) > np.cos(np.radians(10)), a], voxel_size)
        if anchor is None:
            origin[a] = lo[a]
        else:
            base = anchor - voxel_size / 2
            origin[a] = base - math.ceil((base - lo[a]) / voxel_size - 1e-9) * voxel_size
    dims = np.maximum(np.ceil((hi - origin) / voxel_size - 1e-9).astype(int), 1)
    for a in range(3):
        extra = int(min_dims[a]) - dims[a]
        if extra > 0:
            if a != 2:
                origin[a] -= (extra // 2) * voxel_size
            dims[a] += extra
    cells = np.zeros(tuple(int(x) for x in dims), dtype=np.uint8)
    g = (pw - origin) / voxel_size
    if cloud.intrinsics is not None:
        _carve_projective(cells, origin, voxel_size, frame, cloud)
    else:
        _carve_rays(cells, (np.zeros(3) - origin) / voxel_size, g)
    idx = np.floor(g).astype(np.int64)
    idx = np.clip(idx, 0, dims - 1)
    cells[idx[:, 0], idx[:, 1], idx[:, 2]] = Cell.OCCUPIED
    return VoxelGrid(cells, float(voxel_size), origin, frame)


@numba.njit(cache=True)
def _fill_columns(cells, seed):
    nx, ny, nz = cells.shape
    conflicts = 0
    for x in range(nx):
        for y in range(ny):
            filling = False
            for z in range(nz - 1, -1, -1):
                c = cells[x, y, z]
                if seed[x, y, z]:
                    filling = True
                elif c == 0:
                    if filling:
                        cells[x, y, z] = 2
                elif c == 1:
                    if filling:
                        conflicts += 1
                    filling = False
                else:
                    filling = False
    return conflicts


def cell_mean_normals(grid: VoxelGrid, cloud: PointCloud) -> np.ndarray:
    """(nx, ny, nz, 3) mean world normal of the points in each cell (0 where empty)."""
    idx = grid.camera_to_index(cloud.points)
    if not np.all(grid.in_bounds(idx)):
        raise FrameMismatch("cloud points fall outside the grid")
    flat = np.ravel_multi_index(idx.T, grid.dims)
    nw = grid.frame.to_world(cloud.normals)
    n = np.prod(grid.dims)
    out = np.stack([np.bincount(flat, weights=nw[:, k], minlength=n) for k in range(3)],
                   axis=1).astype(float)
    cnt = np.bincount(flat, minlength=n)
    out /= np.maximum(cnt, 1)[:, None]
    return out.reshape(*grid.dims, 3)


def fill_below(grid: VoxelGrid, cloud: PointCloud, frame: Optional[ManhattanFrame] = None,
               *, min_angle_from_down: float = 45.0) -> VoxelGrid:
    """Assume every non-downward-facing surface cell is supported from beneath.

    A seed is an OCCUPIED cell whose mean point normal is at least
    ``min_angle_from_down`` degrees away from straight down.  UNKNOWN cells
    below a seed become OCCUPIED until the next OCCUPIED or FREE cell.
    FREE cells are never overwritten; columns stopped by one are counted in
    ``fill_conflicts``.
    """
    if frame is not None and not frame.same_as(grid.frame):
        raise FrameMismatch("cloud frame differs from the grid frame")
    idx = grid.camera_to_index(cloud.points)
    if not np.all(grid.in_bounds(idx)) or np.any(
            grid.cells[idx[:, 0], idx[:, 1], idx[:, 2]] != Cell.OCCUPIED):
        raise FrameMismatch("cloud is not consistent with the grid occupancy")
    if not np.any(grid.cells == Cell.OCCUPIED):
        return grid
    normals = cell_mean_normals(grid, cloud)
    length = np.linalg.norm(normals, axis=-1)
    up = normals[..., grid.up_axis] / np.where(length > 0, length, 1.0)
    cos_limit = math.cos(math.radians(min_angle_from_down))
    seed = (grid.cells == Cell.OCCUPIED) & (length > 1e-9) & (-up <= cos_limit + 1e-12)
    cells = grid.cells.copy()
    conflicts = _fill_columns(cells, seed)
    return replace(grid, cells=cells, fill_conflicts=grid.fill_conflicts + int(conflicts))
