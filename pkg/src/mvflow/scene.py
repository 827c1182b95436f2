"""Analytic multi-view renderer: the dataset generator and geometry oracle.

Spheres and axis-aligned boxes under view-independent Lambertian shading,
so a world point visible from two cameras has identical styled color in
both renders. Emits RGB, depth, binary edges, and exact per-pixel world
points per view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, pixel_ray_directions, unproject
from .rng import RandomStream

DEPTH_SENTINEL = np.float32(1e9)
FAR_PLANE = 100.0
BACKGROUND_TOP = 0.25
BACKGROUND_BOTTOM = 0.45
EDGE_DEPTH_RATIO = 0.05
_STYLE_SEED = 0x5747  # fixed so styles are identical across runs and hosts


@dataclass(frozen=True)
class SceneObject:
    kind: str  # "sphere" | "box"
    base_color: np.ndarray
    object_id: int
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    center: np.ndarray | None = None
    radius: float | None = None
    min_corner: np.ndarray | None = None
    max_corner: np.ndarray | None = None

    def __post_init__(self):
        if self.object_id <= 0:
            raise ValueError("object_id must be positive")
        if self.kind == "sphere":
            if self.center is None or self.radius is None or self.radius <= 0:
                raise ValueError("sphere needs a center and a positive radius")
        elif self.kind == "box":
            mn, mx = np.asarray(self.min_corner), np.asarray(self.max_corner)
            if self.min_corner is None or self.max_corner is None or not np.all(mn < mx):
                raise ValueError("box needs min_corner < max_corner per axis")
        else:
            raise ValueError(f"unknown object kind {self.kind!r}")


@dataclass
class ViewTrack:
    intrinsics: CameraIntrinsics
    poses: list  # one CameraPose per frame


@dataclass
class ClipSpec:
    objects: list
    views: list  # K ViewTracks
    frames: int
    height: int
    width: int
    light_direction: np.ndarray
    style_ids: list
    seed: int = 0

    def __post_init__(self):
        if self.frames <= 0 or self.frames % 8:
            raise ValueError("frame count must be positive and divisible by 8")
        if self.height % 8 or self.width % 8:
            raise ValueError("resolution must be divisible by 8")
        if not self.views:
            raise ValueError("need at least one view")
        if len(self.style_ids) != len(self.views):
            raise ValueError("one style id per view")
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object_ids must be unique")
        l = np.asarray(self.light_direction, dtype=np.float64)
        if abs(np.linalg.norm(l) - 1.0) > 1e-6:
            raise ValueError("light_direction must be a unit vector")
        for vt in self.views:
            if len(vt.poses) != self.frames:
                raise ValueError("each view needs one pose per frame")
        if len(self.views) >= 3:
            static = [all(np.array_equal(p.rotation, vt.poses[0].rotation)
                          and np.array_equal(p.translation, vt.poses[0].translation)
                          for p in vt.poses) for vt in self.views]
            if all(static):
                raise ValueError("K >= 3 requires at least one moving camera")


@dataclass
class ViewData:
    rgb: np.ndarray  # uint8 (3, T, H, W)
    depth: np.ndarray  # float32 (T, H, W)
    edges: np.ndarray  # uint8 (T, H, W)
    points: np.ndarray  # float32 (T, H, W, 3)
    track: ViewTrack
    style_id: int


@dataclass
class ClipBundle:
    views: list  # ViewData per view
    seed: int = 0

    @property
    def frames(self):
        return self.views[0].depth.shape[0]


def intersect_ray_sphere(origin, direction, center, radius, checked=True):
    """Smallest positive hit distance, or None."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if checked and abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("direction must be normalized")
    oc = o - np.asarray(center, dtype=np.float64)
    b = float(d @ oc)
    disc = b * b - (float(oc @ oc) - radius * radius)
    if disc < 0:
        return None
    s = np.sqrt(disc)
    for t in (-b - s, -b + s):
        if t > 1e-9:
            return float(t)
    return None


def intersect_ray_box(origin, direction, min_corner, max_corner):
    """Slab method; smallest positive boundary crossing, or None."""
    mn = np.asarray(min_corner, dtype=np.float64)
    mx = np.asarray(max_corner, dtype=np.float64)
    if not np.all(mn < mx):
        raise ValueError("degenerate box")
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (mn - o) / d
        t2 = (mx - o) / d
    # rays starting exactly on a slab boundary while parallel to it: 0/0
    nan = np.isnan(t1) | np.isnan(t2)
    if np.any(nan):
        inside = (o >= mn) & (o <= mx)
        if np.any(nan & ~inside):
            return None
        t1 = np.where(nan, -np.inf, t1)
        t2 = np.where(nan, np.inf, t2)
    near = float(np.minimum(t1, t2).max())
    far = float(np.maximum(t1, t2).min())
    if near > far or far <= 1e-9:
        return None
    return near if near > 1e-9 else far


def apply_style(base_color, style_id: int, n_styles: int = 4):
    """Deterministic per-style color map; style 0 is the identity."""
    mat, bias = _style_transform(style_id, n_styles)
    c = np.asarray(base_color, dtype=np.float64)
    return np.clip(c @ mat.T + bias, 0.0, 1.0)


def _style_transform(style_id: int, n_styles: int):
    if not 0 <= style_id < n_styles:
        raise ValueError(f"style_id {style_id} outside vocabulary of {n_styles}")
    if style_id == 0:
        return np.eye(3), np.zeros(3)
    rs = RandomStream(_STYLE_SEED, style_id)
    perm = np.eye(3)[rs.permutation(3)]
    rand = rs.uniform((3, 3)).astype(np.float64)
    rand /= rand.sum(axis=1, keepdims=True)
    mat = 0.65 * perm + 0.35 * rand
    bias = -0.1 + 0.3 * rs.uniform((3,)).astype(np.float64)
    return mat, bias


def _object_state(obj: SceneObject, frame: int):
    """Object geometry advanced by its per-frame velocity."""
    off = np.asarray(obj.velocity, dtype=np.float64) * frame
    if obj.kind == "sphere":
        return np.asarray(obj.center, dtype=np.float64) + off, None
    return (np.asarray(obj.min_corner, dtype=np.float64) + off,
            np.asarray(obj.max_corner, dtype=np.float64) + off)


def _hit_sphere_batch(o, dirs, center, radius):
    oc = o - center
    b = dirs @ oc
    disc = b * b - (oc @ oc - radius * radius)
    s = np.sqrt(np.maximum(disc, 0.0))
    t1 = -b - s
    t2 = -b + s
    t = np.where(t1 > 1e-9, t1, np.where(t2 > 1e-9, t2, np.inf))
    return np.where(disc >= 0, t, np.inf)


def _hit_box_batch(o, dirs, mn, mx):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (mn - o) / dirs
        t2 = (mx - o) / dirs
    nan = np.isnan(t1) | np.isnan(t2)
    if np.any(nan):
        inside = (o >= mn) & (o <= mx)
        t1 = np.where(nan, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(nan, np.where(inside, np.inf, np.inf), t2)
    near = np.minimum(t1, t2).max(axis=-1)
    far = np.maximum(t1, t2).min(axis=-1)
    t = np.where(near > 1e-9, near, far)
    return np.where((near <= far) & (far > 1e-9), t, np.inf)


def _sphere_normal(pts, center):
    n = pts - center
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _box_normal(pts, mn, mx):
    c = (mn + mx) / 2
    half = (mx - mn) / 2
    rel = (pts - c) / half
    axis = np.abs(rel).argmax(axis=-1)
    n = np.zeros_like(pts)
    rows = np.arange(pts.shape[0])
    n[rows, axis] = np.sign(rel[rows, axis])
    return n


def _render_frame(spec: ClipSpec, track: ViewTrack, frame: int, styled_colors):
    h, w = spec.height, spec.width
    intr, pose = track.intrinsics, track.poses[frame]
    vv, uu = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    px = np.stack([uu, vv], axis=-1).reshape(-1, 2)
    dirs = pixel_ray_directions(px, intr, pose)
    o = pose.center()

    best_t = np.full(h * w, np.inf)
    best_id = np.zeros(h * w, dtype=np.int32)
    for obj in spec.objects:
        a, b = _object_state(obj, frame)
        if obj.kind == "sphere":
            t = _hit_sphere_batch(o, dirs, a, obj.radius)
        else:
            t = _hit_box_batch(o, dirs, a, b)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_id = np.where(closer, obj.object_id, best_id)

    hit = np.isfinite(best_t)
    pts = o + np.where(hit, best_t, 0.0)[:, None] * dirs
    cam_z = (pts - o) @ pose.forward()
    depth = np.where(hit, cam_z, DEPTH_SENTINEL).astype(np.float32)

    grad = BACKGROUND_TOP + (BACKGROUND_BOTTOM - BACKGROUND_TOP) * (
        vv.reshape(-1) / max(h - 1, 1))
    rgb = np.repeat(grad[:, None], 3, axis=1)
    light = np.asarray(spec.light_direction, dtype=np.float64)
    for obj in spec.objects:
        sel = hit & (best_id == obj.object_id)
        if not np.any(sel):
            continue
        a, b = _object_state(obj, frame)
        if obj.kind == "sphere":
            n = _sphere_normal(pts[sel], a)
        else:
            n = _box_normal(pts[sel], a, b)
        lam = 0.2 + 0.8 * np.maximum(0.0, n @ light)
        rgb[sel] = styled_colors[obj.object_id] * lam[:, None]

    far_pts = unproject(px, np.full(h * w, FAR_PLANE), intr, pose)
    pts = np.where(hit[:, None], pts, far_pts)
    return (rgb.reshape(h, w, 3), depth.reshape(h, w),
            best_id.reshape(h, w), pts.reshape(h, w, 3).astype(np.float32))


def edge_map(object_ids: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Binary edges: pixel p is an edge iff some 4-neighbor q has a different
    object_id or |z(p)/z(q) - 1| exceeds the ratio threshold."""
    e = np.zeros(object_ids.shape, dtype=bool)
    z = depth.astype(np.float64)
    for axis in (0, 1):
        ida = np.moveaxis(object_ids, axis, 0)
        za = np.moveaxis(z, axis, 0)
        ea = np.moveaxis(e, axis, 0)
        ids_differ = ida[1:] != ida[:-1]
        # the ratio test is taken from each pixel's own side
        ea[:-1] |= ids_differ | (np.abs(za[:-1] / za[1:] - 1.0) > EDGE_DEPTH_RATIO)
        ea[1:] |= ids_differ | (np.abs(za[1:] / za[:-1] - 1.0) > EDGE_DEPTH_RATIO)
    return e.astype(np.uint8)


def render_clip(spec: ClipSpec) -> ClipBundle:
    styled_per_view = []
    for style in spec.style_ids:
        styled_per_view.append({
            o.object_id: apply_style(o.base_color, style) for o in spec.objects})

    views = []
    for k, track in enumerate(spec.views):
        t, h, w = spec.frames, spec.height, spec.width
        rgb = np.empty((3, t, h, w), dtype=np.uint8)
        depth = np.empty((t, h, w), dtype=np.float32)
        edges = np.empty((t, h, w), dtype=np.uint8)
        points = np.empty((t, h, w, 3), dtype=np.float32)
        for f in range(t):
            c, d, ids, p = _render_frame(spec, track, f, styled_per_view[k])
            rgb[:, f] = np.round(c * 255.0).clip(0, 255).astype(np.uint8).transpose(2, 0, 1)
            depth[f] = d
            edges[f] = edge_map(ids, d)
            points[f] = p
        views.append(ViewData(rgb, depth, edges, points, track, spec.style_ids[k]))
    return ClipBundle(views, spec.seed)
