"""Camera math, Plücker ray grids, point pooling, and gauge handling.

Conventions: world -> camera is x_cam = R @ x_world + t; pixel coordinates
are (u, v) = (column, row) and rays pass through integer pixel coordinates,
so the principal pixel looks exactly along the optical axis. World up is +z;
image v grows downward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray  # (3,3) world->camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and a 3-vector translation")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def forward(self) -> np.ndarray:
        """Optical axis (+z of the camera frame) in world coordinates."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    nf = np.linalg.norm(f)
    if nf < 1e-9:
        raise ValueError("eye and target coincide")
    f = f / nf
    x = np.cross(f, np.asarray(up, dtype=np.float64))
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("viewing direction parallel to up")
    x = x / nx
    y = np.cross(f, x)
    r = np.stack([x, y, f])
    return CameraPose(r, -r @ eye)


def project(points, intrinsics: CameraIntrinsics, pose: CameraPose):
    """World points (..., 3) -> pixel (..., 2) and camera depth (...).

    Depth <= 0 marks points behind the camera; callers must mask on it.
    """
    p = np.asarray(points, dtype=np.float64)
    cam = p @ pose.rotation.T + pose.translation
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[..., 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1), z


def unproject(pixels, depth, intrinsics: CameraIntrinsics, pose: CameraPose):
    """Inverse of project for depth > 0; pixels (..., 2), depth (...)."""
    px = np.asarray(pixels, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("unproject requires positive depth")
    x = (px[..., 0] - intrinsics.cx) / intrinsics.fx * z
    y = (px[..., 1] - intrinsics.cy) / intrinsics.fy * z
    cam = np.stack([x, y, z], axis=-1)
    return (cam - pose.translation) @ pose.rotation


def pixel_ray_directions(pixels, intrinsics: CameraIntrinsics, pose: CameraPose):
    """Unit world-space ray directions through pixel coordinates (..., 2)."""
    px = np.asarray(pixels, dtype=np.float64)
    x = (px[..., 0] - intrinsics.cx) / intrinsics.fx
    y = (px[..., 1] - intrinsics.cy) / intrinsics.fy
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ pose.rotation  # R^T applied row-wise


def _retained_poses(poses, t_lat):
    poses = list(poses)
    if len(poses) == t_lat:
        return poses
    if len(poses) == 8 * t_lat:
        return poses[::8]
    raise ValueError(f"need {t_lat} retained or {8 * t_lat} full poses, got {len(poses)}")


def make_ray_grid(intrinsics: CameraIntrinsics, poses, latent_extents) -> np.ndarray:
    """Plücker (d, m) grid, float32 (T_lat, H_lat, W_lat, 6).

    Rays are evaluated at the full-resolution pixel centers of latent cells:
    pixel (8i+3.5, 8j+3.5) for cell (i, j). m = o x d with o the camera
    center, so the pair identifies the ray independent of parametrization.
    """
    t_lat, h_lat, w_lat = latent_extents
    poses = _retained_poses(poses, t_lat)
    vv, uu = np.meshgrid(np.arange(h_lat) * 8.0 + 3.5,
                         np.arange(w_lat) * 8.0 + 3.5, indexing="ij")
    px = np.stack([uu, vv], axis=-1)
    grid = np.empty((t_lat, h_lat, w_lat, 6), dtype=np.float32)
    for ti, pose in enumerate(poses):
        d = pixel_ray_directions(px, intrinsics, pose)
        o = pose.center()
        m = np.cross(np.broadcast_to(o, d.shape), d)
        grid[ti, ..., :3] = d
        grid[ti, ..., 3:] = m
    return grid


def pool_pointmap(points: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Depth-aware 8x pooling: per retained frame and 8x8 patch keep the
    world point of the minimum-depth pixel (row-major first on ties)."""
    t, h, w = depth.shape
    if points.shape != (t, h, w, 3):
        raise ValueError("points extents must match depth extents")
    if t % 8 or h % 8 or w % 8:
        raise ValueError("extents must be divisible by 8")
    dep = depth[0::8].reshape(t // 8, h // 8, 8, w // 8, 8)
    dep = dep.transpose(0, 1, 3, 2, 4).reshape(t // 8, h // 8, w // 8, 64)
    idx = dep.argmin(axis=-1)
    pts = points[0::8].reshape(t // 8, h // 8, 8, w // 8, 8, 3)
    pts = pts.transpose(0, 1, 3, 2, 4, 5).reshape(t // 8, h // 8, w // 8, 64, 3)
    return np.take_along_axis(pts, idx[..., None, None], axis=3)[..., 0, :].astype(np.float32)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points):
        p = np.asarray(points)
        return self.scale * (p @ np.asarray(self.rotation).T) + self.translation


@dataclass(frozen=True)
class PooledPoints:
    points: np.ndarray  # (..., 3), normalized
    transform: SimilarityTransform  # maps raw input points to .points


def normalize_points(pooled: np.ndarray) -> PooledPoints:
    """Centroid-zero, unit-mean-distance gauge normalization.

    Accepts any (..., 3) grid; when a clip has several views, stack them
    first so the whole clip shares one similarity transform (the injected
    signal must live in a single global frame).
    """
    p = np.asarray(pooled, dtype=np.float64)
    if p.size == 0 or p.shape[-1] != 3:
        raise ValueError("expected a nonempty (..., 3) point grid")
    flat = p.reshape(-1, 3)
    centroid = flat.mean(axis=0)
    dist = np.linalg.norm(flat - centroid, axis=1).mean()
    if dist < 1e-12:
        raise ValueError("all points identical; gauge scale undefined")
    out = ((p - centroid) / dist).astype(np.float32)
    tf = SimilarityTransform(1.0 / dist, np.eye(3), -centroid / dist)
    return PooledPoints(out, tf)


def random_rotation(stream) -> np.ndarray:
    """Uniform SO(3) sample via a normalized quaternion."""
    q = stream.normal((4,)).astype(np.float64)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_gauge(points: np.ndarray, stream, scale_range=(0.5, 2.0),
                 translation_range=(-1.0, 1.0), with_rotation=True) -> np.ndarray:
    """Random similarity transform applied jointly to every point of a clip."""
    rot = random_rotation(stream) if with_rotation else np.eye(3)
    lo, hi = scale_range
    s = lo + (hi - lo) * stream.uniform_scalar()
    tlo, thi = translation_range
    t = tlo + (thi - tlo) * stream.uniform((3,)).astype(np.float64)
    p = np.asarray(points, dtype=np.float64)
    return (s * (p @ rot.T) + t).astype(np.float32)
