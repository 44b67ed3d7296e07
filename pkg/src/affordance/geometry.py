"""Depth backprojection, surface normals and Manhattan frame recovery.

Camera coordinates follow the usual pinhole convention: x to the right,
y down, z along the optical axis.  A :class:`ManhattanFrame` maps camera
coordinates into a gravity-aligned world frame whose third axis points up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import AllPixelsMissing, DegenerateScene

MISSING_DEPTH = 0.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def default(cls, width: int, height: int) -> "CameraIntrinsics":
        """Structured-light style defaults (fx = fy = 570, centred principal point)."""
        return cls(570.0, 570.0, width / 2.0, height / 2.0, width, height)

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for the same camera at ``factor`` times the resolution."""
        w = int(round(self.width * factor))
        h = int(round(self.height * factor))
        return CameraIntrinsics(self.fx * factor, self.fy * factor,
                                self.cx * factor, self.cy * factor, w, h)

    def as_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class DepthMap:
    depths: np.ndarray  # (height, width) metres, 0.0 = missing
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        if d.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(f"depth shape {d.shape} does not match intrinsics "
                             f"{(self.intrinsics.height, self.intrinsics.width)}")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("depths must be finite and non-negative")
        object.__setattr__(self, "depths", _frozen(d))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depths.shape

    @property
    def valid(self) -> np.ndarray:
        return self.depths > MISSING_DEPTH


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray       # (N, 3) camera frame
    normals: np.ndarray      # (N, 3) unit, oriented toward the camera
    pixel_index: np.ndarray  # (N,) flat index into the source image
    image_shape: Tuple[int, int]
    intrinsics: Optional[CameraIntrinsics] = None   # set when points are still in the camera frame

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(np.asarray(self.points, float).reshape(-1, 3)))
        object.__setattr__(self, "normals", _frozen(np.asarray(self.normals, float).reshape(-1, 3)))
        object.__setattr__(self, "pixel_index", _frozen(np.asarray(self.pixel_index, np.int64)))
        if not (len(self.points) == len(self.normals) == len(self.pixel_index)):
            raise ValueError("points, normals and pixel_index must have equal length")

    def __len__(self) -> int:
        return len(self.points)

    def pixels(self) -> Tuple[np.ndarray, np.ndarray]:
        """(rows, cols) of the originating pixels."""
        return np.unravel_index(self.pixel_index, self.image_shape)

    def transformed(self, rotation: np.ndarray) -> "PointCloud":
        """The same cloud with points and normals rotated by ``rotation``."""
        r = np.asarray(rotation, float)
        return PointCloud(self.points @ r.T, self.normals @ r.T,
                          self.pixel_index, self.image_shape)   # no longer a camera-frame view


@dataclass(frozen=True)
class ManhattanFrame:
    gravity: np.ndarray
    axis2: np.ndarray
    axis3: np.ndarray
    rotation: np.ndarray = field(init=False)

    def __post_init__(self):
        g = np.asarray(self.gravity, float)
        a2 = np.asarray(self.axis2, float)
        a3 = np.asarray(self.axis3, float)
        object.__setattr__(self, "gravity", _frozen(g))
        object.__setattr__(self, "axis2", _frozen(a2))
        object.__setattr__(self, "axis3", _frozen(a3))
        # rows are the world axes expressed in camera coordinates
        object.__setattr__(self, "rotation", _frozen(np.stack([a2, a3, g])))

    @classmethod
    def from_gravity_and_heading(cls, gravity, heading) -> "ManhattanFrame":
        """Orthonormalise ``heading`` against ``gravity`` and complete the frame."""
        g = _unit(np.asarray(gravity, float))
        h = np.asarray(heading, float)
        h = _unit(h - (h @ g) * g)
        return cls(g, h, np.cross(g, h))

    @classmethod
    def identity(cls) -> "ManhattanFrame":
        return cls(np.array([0.0, 0, 1]), np.array([1.0, 0, 0]), np.array([0.0, 1, 0]))

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, float) @ self.rotation.T

    def same_as(self, other: "ManhattanFrame", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.rotation, other.rotation, atol=atol))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def pixel_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """(H, W, 3) ray directions with unit z component, through pixel centres."""
    v, u = np.mgrid[0:intrinsics.height, 0:intrinsics.width].astype(float)
    return np.stack([(u - intrinsics.cx) / intrinsics.fx,
                     (v - intrinsics.cy) / intrinsics.fy,
                     np.ones_like(u)], axis=-1)


def reproject(points: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Perspective projection of camera-frame points to (u, v) pixel coordinates."""
    p = np.asarray(points, float).reshape(-1, 3)
    u = intrinsics.fx * p[:, 0] / p[:, 2] + intrinsics.cx
    v = intrinsics.fy * p[:, 1] / p[:, 2] + intrinsics.cy
    return np.stack([u, v], axis=1)


def estimate_normals(xyz: np.ndarray, valid: np.ndarray, radius: int = 2,
                     max_rel_jump: float = 0.1) -> np.ndarray:
    """Per-pixel normals from plane fits over a (2r+1)^2 pixel window.

    The normal is the eigenvector of the smallest eigenvalue of the local
    covariance.  Neighbours whose depth differs from the centre by more than
    ``max_rel_jump`` (relative) are left out so depth edges do not blur.
    Normals face the camera.  Pixels with fewer than three usable neighbours
    get the reversed viewing ray.
    """
    h, w = valid.shape
    z0 = xyz[..., 2]
    pad = radius
    P = np.pad(xyz, ((pad, pad), (pad, pad), (0, 0)))
    V = np.pad(valid, pad)
    n = np.zeros((h, w))
    s = np.zeros((h, w, 3))
    ss = np.zeros((h, w, 3, 3))
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            q = P[dy:dy + h, dx:dx + w]
            ok = V[dy:dy + h, dx:dx + w] & valid
            ok &= np.abs(q[..., 2] - z0) <= max_rel_jump * z0
            wq = ok[..., None] * q
            n += ok
            s += wq
            ss += wq[..., :, None] * q[..., None, :]
    mean = s / np.maximum(n, 1)[..., None]
    cov = ss / np.maximum(n, 1)[..., None, None] - mean[..., :, None] * mean[..., None, :]
    normals = -_unit(xyz)
    good = valid & (n >= 3)
    if np.any(good):
        _, vecs = np.linalg.eigh(cov[good])
        nv = vecs[:, :, 0]
        flip = np.einsum("ij,ij->i", nv, xyz[good]) > 0
        nv[flip] *= -1
        normals[good] = _unit(nv)
    return normals


def backproject(depth: DepthMap, normal_radius: int = 2) -> PointCloud:
    """One camera-frame point per valid pixel, with estimated normals."""
    valid = depth.valid
    if not np.any(valid):
        raise AllPixelsMissing("depth map contains no valid pixels")
    xyz = pixel_rays(depth.intrinsics) * depth.depths[..., None]
    normals = estimate_normals(xyz, valid, radius=normal_radius)
    idx = np.flatnonzero(valid)
    return PointCloud(xyz.reshape(-1, 3)[idx], normals.reshape(-1, 3)[idx], idx, depth.shape,
                      depth.intrinsics)


def densify(cloud: PointCloud, spacing: float, max_rel_jump: float = 0.1,
            max_steps: int = 16) -> PointCloud:
    """Fill the gaps between neighbouring pixels with interpolated surface points.

    Every 2x2 pixel quad whose four points are valid and depth-continuous
    (relative depth spread at most ``max_rel_jump``) is sampled bilinearly,
    finely enough that neighbouring samples are at most ``spacing`` apart
    (capped at ``max_steps`` per side).  Interpolated samples carry the
    interpolated normal and the index of the quad's top-left pixel.  The
    original points come first, unchanged.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    h, w = cloud.image_shape
    if h < 2 or w < 2 or len(cloud) == 0:
        return cloud
    P = np.zeros((h * w, 3))
    N = np.zeros((h * w, 3))
    V = np.zeros(h * w, bool)
    P[cloud.pixel_index] = cloud.points
    N[cloud.pixel_index] = cloud.normals
    V[cloud.pixel_index] = True
    P, N, V = P.reshape(h, w, 3), N.reshape(h, w, 3), V.reshape(h, w)
    corners = [(slice(0, -1), slice(0, -1)), (slice(0, -1), slice(1, None)),
               (slice(1, None), slice(0, -1)), (slice(1, None), slice(1, None))]
    q = np.stack([P[c] for c in corners])            # (4, h-1, w-1, 3)
    qn = np.stack([N[c] for c in corners])
    ok = np.all(np.stack([V[c] for c in corners]), axis=0)
    z = q[..., 2]
    zmin = np.where(ok, z.min(axis=0), 1.0)
    ok &= z.max(axis=0) - zmin <= max_rel_jump * zmin
    edges = np.stack([q[1] - q[0], q[2] - q[0], q[3] - q[1], q[3] - q[2]])
    longest = np.linalg.norm(edges, axis=-1).max(axis=0)
    steps = np.clip(np.ceil(longest / spacing), 1, max_steps).astype(int)
    steps[~ok] = 0
    pts, nrm, pix = [cloud.points], [cloud.normals], [cloud.pixel_index]
    for k in np.unique(steps[steps > 1]):
        yy, xx = np.nonzero(steps == k)
        t = np.arange(k + 1) / k
        v, u = [a.ravel() for a in np.meshgrid(t, t, indexing="ij")]
        inner = ((u > 0) | (v > 0)) & ((u < 1) | (v > 0)) & ((u > 0) | (v < 1)) & ((u < 1) | (v < 1))
        u, v = u[inner], v[inner]
        wts = np.stack([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v])   # (4, m)
        cq = q[:, yy, xx]                                                    # (4, n, 3)
        cn = qn[:, yy, xx]
        pts.append(np.einsum("km,knc->nmc", wts, cq).reshape(-1, 3))
        nn = np.einsum("km,knc->nmc", wts, cn).reshape(-1, 3)
        nrm.append(nn / np.maximum(np.linalg.norm(nn, axis=1, keepdims=True), 1e-12))
        pix.append(np.repeat(yy * w + xx, len(u)))
    return PointCloud(np.concatenate(pts), np.concatenate(nrm), np.concatenate(pix),
                      cloud.image_shape, cloud.intrinsics)


def _mean_shift_direction(normals: np.ndarray, start: np.ndarray, window_deg: float,
                          iters: int = 20) -> np.ndarray:
    g = _unit(start)
    cos_w = np.cos(np.radians(window_deg))
    for _ in range(iters):
        sel = normals[normals @ g >= cos_w]
        if len(sel) == 0:
            break
        g_new = _unit(sel.mean(axis=0))
        if np.allclose(g_new, g, atol=1e-12):
            break
        g = g_new
    return g


def estimate_gravity(cloud: PointCloud, floor_mask: Optional[np.ndarray] = None,
                     init_window_deg: float = 45.0, window_deg: float = 10.0) -> np.ndarray:
    """Up direction in camera coordinates.

    With ``floor_mask`` the floor points are fitted with a plane.  Otherwise
    the dominant normal cluster within ``init_window_deg`` of the image up
    direction (-y) is located by mean shift.
    """
    if floor_mask is not None:
        sel = np.asarray(floor_mask, bool).reshape(-1)[cloud.pixel_index]
        pts = cloud.points[sel]
        if len(pts) < 3:
            raise DegenerateScene("floor mask selects fewer than 3 points")
        centred = pts - pts.mean(axis=0)
        _, _, vt = np.linalg.svd(centred, full_matrices=False)
        g = vt[-1]
        # the camera sits above the floor
        if g @ (-pts.mean(axis=0)) < 0:
            g = -g
        return _unit(g)
    up = np.array([0.0, -1.0, 0.0])
    cand = cloud.normals[cloud.normals @ up >= np.cos(np.radians(init_window_deg))]
    if len(cand) == 0:
        raise DegenerateScene("no upward-facing normals near the image up axis")
    # seed from the densest direction among the candidates
    sample = cand if len(cand) <= 2000 else cand[np.linspace(0, len(cand) - 1, 2000).astype(int)]
    support = (sample @ sample.T >= np.cos(np.radians(window_deg))).sum(axis=1)
    g = _mean_shift_direction(cand, sample[np.argmax(support)], window_deg)
    return g


def _wrap_quarter(a: np.ndarray) -> np.ndarray:
    """Wrap angles to [-pi/4, pi/4)."""
    return (a + np.pi / 4) % (np.pi / 2) - np.pi / 4


def estimate_frame(cloud: PointCloud, floor_mask: Optional[np.ndarray] = None, *,
                   seed: int = 0, iterations: int = 1000, inlier_deg: float = 10.0,
                   min_inlier_fraction: float = 0.05, min_points: int = 100) -> ManhattanFrame:
    """Gravity plus the dominant horizontal Manhattan direction.

    The horizontal direction is chosen by RANSAC over normals perpendicular
    to gravity; each hypothesis counts the normals within ``inlier_deg`` of
    any of its four Manhattan directions.  Of the four equivalent headings
    the one closest to the camera x axis is returned.
    """
    if len(cloud) < min_points:
        raise DegenerateScene(f"need at least {min_points} points, got {len(cloud)}")
    g = estimate_gravity(cloud, floor_mask, window_deg=inlier_deg)
    tol = np.sin(np.radians(inlier_deg))
    e1 = np.cross(g, [1.0, 0, 0]) if abs(g[0]) < 0.9 else np.cross(g, [0, 0, 1.0])
    e1 = _unit(e1)
    e2 = np.cross(g, e1)
    n = cloud.normals
    horiz = n[np.abs(n @ g) < tol]
    needed = min_inlier_fraction * len(cloud)
    if len(horiz) < max(needed, 1):
        raise DegenerateScene("too few horizontal normals for a Manhattan heading")
    phi = np.arctan2(horiz @ e2, horiz @ e1)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(phi), size=iterations)
    thr = np.radians(inlier_deg)
    best_count, best_phi = -1, 0.0
    for start in range(0, iterations, 64):
        cand = phi[picks[start:start + 64]]
        counts = (np.abs(_wrap_quarter(phi[None, :] - cand[:, None])) < thr).sum(axis=1)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_count, best_phi = int(counts[j]), float(cand[j])
    if best_count < needed:
        raise DegenerateScene(f"horizontal consensus {best_count} below {needed:.0f} points")
    for _ in range(3):
        d = _wrap_quarter(phi - best_phi)
        inl = np.abs(d) < thr
        best_phi = best_phi + float(d[inl].mean())
    headings = [np.cos(best_phi + k * np.pi / 2) * e1 + np.sin(best_phi + k * np.pi / 2) * e2
                for k in range(4)]
    cam_x = np.array([1.0, 0, 0])
    a2 = max(headings, key=lambda h: float(h @ cam_x))
    return ManhattanFrame.from_gravity_and_heading(g, a2)
