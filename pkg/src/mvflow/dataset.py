"""Synthetic dataset generation and the on-disk clip layout.

Layout: ``<root>/manifest.json`` plus ``clip_<index 4 digits>/`` holding a
per-clip ``manifest.json`` (cameras, style ids, seed) and WVT1 tensors
``rgb_v<k>.wvt`` (uint8 3xTxHxW), ``depth_v<k>.wvt``, ``edges_v<k>.wvt``,
``points_v<k>.wvt``. Clip seeds derive from (seed, clip index), so any clip
regenerates independently of the others.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, look_at
from .rng import RandomStream
from .scene import ClipBundle, ClipSpec, SceneObject, ViewData, ViewTrack, render_clip
from .tensor_io import read_tensor, write_tensor


@dataclass
class DatasetConfig:
    clips: int = 8
    K: int = 3
    T: int = 16
    H: int = 64
    W: int = 64
    styles: int = 4
    objects_min: int = 2
    objects_max: int = 4

    def __post_init__(self):
        if self.clips < 1 or self.K < 1 or self.styles < 1:
            raise ValueError("clips, K, and styles must be positive")
        if self.T % 8 or self.H % 8 or self.W % 8:
            raise ValueError("T, H, W must be divisible by 8")
        if not 1 <= self.objects_min <= self.objects_max:
            raise ValueError("bad object-count range")


def _random_objects(rs: RandomStream, cfg: DatasetConfig):
    objects = []
    n = int(rs.integers(cfg.objects_min, cfg.objects_max + 1))
    for i in range(n):
        color = 0.15 + 0.7 * rs.uniform((3,)).astype(np.float64)
        velocity = (-0.04 + 0.08 * rs.uniform((3,))).astype(np.float64)
        center = np.array([
            -1.2 + 2.4 * rs.uniform_scalar(),
            -1.2 + 2.4 * rs.uniform_scalar(),
            -0.4 + 1.0 * rs.uniform_scalar(),
        ])
        if rs.uniform_scalar() < 0.5:
            objects.append(SceneObject(
                kind="sphere", base_color=color, object_id=i + 1,
                velocity=velocity, center=center,
                radius=0.35 + 0.35 * rs.uniform_scalar()))
        else:
            half = 0.25 + 0.3 * rs.uniform((3,)).astype(np.float64)
            objects.append(SceneObject(
                kind="box", base_color=color, object_id=i + 1,
                velocity=velocity, min_corner=center - half, max_corner=center + half))
    return objects


def _orbit_eye(azimuth, radius, height):
    return np.array([radius * np.cos(azimuth), radius * np.sin(azimuth), height])


def _random_views(rs: RandomStream, cfg: DatasetConfig):
    intr = CameraIntrinsics(fx=float(cfg.W), fy=float(cfg.W),
                            cx=cfg.W / 2.0, cy=cfg.H / 2.0,
                            width=cfg.W, height=cfg.H)
    target = (-0.2 + 0.4 * rs.uniform((3,))).astype(np.float64)
    base_az = 2 * np.pi * rs.uniform_scalar()
    views = []
    for k in range(cfg.K):
        radius = 3.2 + 1.0 * rs.uniform_scalar()
        height = 1.2 + 1.2 * rs.uniform_scalar()
        if cfg.K >= 3 and k == 2:
            # the orbiting camera mirrors a dynamic in-hand view
            az0 = 2 * np.pi * rs.uniform_scalar()
            speed = np.deg2rad(1.0 + 2.0 * rs.uniform_scalar())
            if rs.uniform_scalar() < 0.5:
                speed = -speed
            poses = [look_at(_orbit_eye(az0 + speed * f, radius, height), target)
                     for f in range(cfg.T)]
        else:
            if k == 0:
                az = base_az
            elif k == 1:
                az = base_az + np.deg2rad(60.0 + 60.0 * rs.uniform_scalar())
            else:
                az = 2 * np.pi * rs.uniform_scalar()
            pose = look_at(_orbit_eye(az, radius, height), target)
            poses = [pose] * cfg.T
        views.append(ViewTrack(intr, poses))
    return views


def random_clip_spec(cfg: DatasetConfig, seed: int, clip_index: int) -> ClipSpec:
    rs = RandomStream(seed, clip_index)
    objects = _random_objects(rs, cfg)
    views = _random_views(rs, cfg)
    light = rs.normal((3,)).astype(np.float64)
    light[2] = abs(light[2]) + 0.5
    light /= np.linalg.norm(light)
    style = int(rs.integers(0, cfg.styles))  # one style shared by all views
    return ClipSpec(objects=objects, views=views, frames=cfg.T,
                    height=cfg.H, width=cfg.W, light_direction=light,
                    style_ids=[style] * cfg.K, seed=clip_index)


def _intr_json(intr: CameraIntrinsics) -> dict:
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height}


def _track_json(track: ViewTrack) -> dict:
    return {
        "intrinsics": _intr_json(track.intrinsics),
        "frames": [{"rotation": [float(x) for x in p.rotation.reshape(-1)],
                    "translation": [float(x) for x in p.translation]}
                   for p in track.poses],
    }


def _object_json(o: SceneObject) -> dict:
    doc = {"kind": o.kind, "object_id": o.object_id,
           "base_color": [float(x) for x in np.asarray(o.base_color)],
           "velocity": [float(x) for x in np.asarray(o.velocity)]}
    if o.kind == "sphere":
        doc["center"] = [float(x) for x in np.asarray(o.center)]
        doc["radius"] = float(o.radius)
    else:
        doc["min_corner"] = [float(x) for x in np.asarray(o.min_corner)]
        doc["max_corner"] = [float(x) for x in np.asarray(o.max_corner)]
    return doc


def write_clip(bundle: ClipBundle, clip_dir, objects=None) -> None:
    os.makedirs(clip_dir, exist_ok=True)
    manifest = {
        "seed": bundle.seed,
        "style_ids": [v.style_id for v in bundle.views],
        "views": [_track_json(v.track) for v in bundle.views],
    }
    if objects is not None:
        manifest["objects"] = [_object_json(o) for o in objects]
    with open(os.path.join(clip_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    for k, v in enumerate(bundle.views):
        write_tensor(v.rgb, os.path.join(clip_dir, f"rgb_v{k}.wvt"))
        write_tensor(v.depth, os.path.join(clip_dir, f"depth_v{k}.wvt"))
        write_tensor(v.edges, os.path.join(clip_dir, f"edges_v{k}.wvt"))
        write_tensor(v.points, os.path.join(clip_dir, f"points_v{k}.wvt"))


def generate_dataset(cfg: DatasetConfig, root, seed: int) -> dict:
    """Render cfg.clips clips under ``root``; returns the manifest."""
    os.makedirs(root, exist_ok=True)
    names = []
    for i in range(cfg.clips):
        spec = random_clip_spec(cfg, seed, i)
        bundle = render_clip(spec)
        name = f"clip_{i:04d}"
        write_clip(bundle, os.path.join(root, name), objects=spec.objects)
        names.append(name)
    manifest = {"config": asdict(cfg), "seed": seed, "clips": names}
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return manifest


def load_manifest(root) -> dict:
    with open(os.path.join(root, "manifest.json")) as fh:
        return json.load(fh)


def _track_from_json(doc: dict) -> ViewTrack:
    intr = CameraIntrinsics(**doc["intrinsics"])
    poses = [CameraPose(np.array(f["rotation"]).reshape(3, 3),
                        np.array(f["translation"]))
             for f in doc["frames"]]
    return ViewTrack(intr, poses)


def load_clip(root, name) -> ClipBundle:
    clip_dir = os.path.join(root, name)
    with open(os.path.join(clip_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    views = []
    for k, style in enumerate(manifest["style_ids"]):
        views.append(ViewData(
            rgb=read_tensor(os.path.join(clip_dir, f"rgb_v{k}.wvt")),
            depth=read_tensor(os.path.join(clip_dir, f"depth_v{k}.wvt")),
            edges=read_tensor(os.path.join(clip_dir, f"edges_v{k}.wvt")),
            points=read_tensor(os.path.join(clip_dir, f"points_v{k}.wvt")),
            track=_track_from_json(manifest["views"][k]),
            style_id=int(style)))
    return ClipBundle(views, manifest["seed"])


def load_dataset(root) -> list:
    return [load_clip(root, name) for name in load_manifest(root)["clips"]]
