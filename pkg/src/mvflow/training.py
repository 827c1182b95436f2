"""Training loops: VAE fitting and the three-stage flow schedule.

Stage "single" treats every (clip, view) pair as a one-view sample with the
cross-view path disabled; "multi" trains all views jointly on shared
timesteps; "hetero" additionally freezes random view subsets at tau=1. All
stages share one parameter set (the cross-view projections exist from
initialization behind zero gates), so a later stage continues an earlier
stage's checkpoint without any remapping, and "hetero" with p_hetero=0
replays "multi" bitwise.

Randomness is keyed off the relevant config seed: stream ids below 10^6 are
reserved for initialization, training step s draws from stream id 10^6 + s.
Within a step the order is fixed per sample (timestep path, modality
dropout, point gauge, noise), so runs replay bitwise from the seeds alone.

Training logs are newline-delimited JSON; flow records carry
{step, flow_loss, wavelet_loss, total, lr, seconds}. Checkpoints land every
max(steps/10, 50) steps plus final, with a latest.json pointer.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from .checkpoint import (Checkpoint, model_params, restore_optimizer,
                         save_checkpoint, write_latest)
from .config import ConfigError, effective_p_hetero, stage_model_config
from .controls import encode_controls
from .dataset import load_clip, load_manifest
from .dit import init_model_params
from .flow import (SamplerConfig, TrainBatch, autoregressive_extend,
                   default_velocity_fn, euler_sample, sample_timestep_path,
                   train_step)
from .geometry import (make_ray_grid, normalize_points, pool_pointmap,
                       random_gauge)
from .moe import init_moe
from .optim import AdamW
from .rng import RandomStream
from .vae import init_vae, reconstruction_loss, vae_encode

STEP_STREAM_BASE = 1_000_000

_STAGE_ORDER = {"single": 0, "multi": 1, "hetero": 2}


@dataclass
class ClipFeatures:
    """Frozen-VAE features of one clip, everything the flow model consumes."""
    name: str
    x1: np.ndarray       # (K, C, T_lat, H_lat, W_lat) clean latents
    f_s: np.ndarray      # sketch features, same extents
    f_d: np.ndarray      # depth features, same extents
    pooled: np.ndarray   # (K, T_lat, H_lat, W_lat, 3) raw pooled world points
    rays: np.ndarray     # (K, T_lat, H_lat, W_lat, 6) Plucker grids
    styles: np.ndarray   # (K,) ints

    @property
    def views(self) -> int:
        return self.x1.shape[0]


def bundle_videos(bundle) -> np.ndarray:
    """Stacked (K, 3, T, H, W) float32 videos in [0, 1]."""
    return np.stack([v.rgb.astype(np.float32) / 255.0 for v in bundle.views])


def clip_features(bundle, vae_params: dict, name: str = "clip") -> ClipFeatures:
    x1, f_s, f_d, pooled, rays, styles = [], [], [], [], [], []
    for view in bundle.views:
        x1.append(vae_encode(vae_params, view.rgb.astype(np.float32) / 255.0))
        fs, fd = encode_controls(view.edges, view.depth, vae_params)
        f_s.append(fs)
        f_d.append(fd)
        pooled.append(pool_pointmap(view.points, view.depth))
        t_lat = view.depth.shape[0] // 8
        h_lat = view.depth.shape[1] // 8
        w_lat = view.depth.shape[2] // 8
        rays.append(make_ray_grid(view.track.intrinsics, view.track.poses,
                                  (t_lat, h_lat, w_lat)))
        styles.append(view.style_id)
    return ClipFeatures(name=name, x1=np.stack(x1), f_s=np.stack(f_s),
                        f_d=np.stack(f_d), pooled=np.stack(pooled),
                        rays=np.stack(rays), styles=np.asarray(styles))


def dataset_features(root, vae_params: dict) -> list:
    """Precompute features for every clip of an on-disk dataset."""
    return [clip_features(load_clip(root, name), vae_params, name=name)
            for name in load_manifest(root)["clips"]]


class _NdjsonLog:
    def __init__(self, out_dir, filename: str, sink=None):
        self.sink = sink
        self.fh = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            self.fh = open(os.path.join(out_dir, filename), "a")

    def write(self, record: dict):
        if self.sink is not None:
            self.sink.append(record)
        if self.fh is not None:
            self.fh.write(json.dumps(record) + "\n")
            self.fh.flush()

    def close(self):
        if self.fh is not None:
            self.fh.close()


def cosine_lr(step: int, peak: float, warmup: int, total: int) -> float:
    """Linear warmup to ``peak`` then cosine decay to zero at ``total``."""
    if warmup > 0 and step < warmup:
        return peak * (step + 1) / warmup
    span = max(total - warmup, 1)
    return peak * 0.5 * (1.0 + float(np.cos(np.pi * (step - warmup) / span)))


def _as_videos(dataset) -> np.ndarray:
    if hasattr(dataset, "views"):
        dataset = [dataset]
    items = list(dataset) if not isinstance(dataset, np.ndarray) else dataset
    if len(items) == 0:
        raise ValueError("empty dataset")
    if hasattr(items[0], "views"):
        return np.concatenate([bundle_videos(b) for b in items])
    return np.stack([np.asarray(v, np.float32) for v in items])


def train_vae(dataset, config: dict, stream: RandomStream | None = None, *,
              out_dir=None, log_sink=None) -> dict:
    """Fit the codec by MSE with AdamW under a warmup+cosine schedule.

    ``dataset`` is a collection of clip bundles (views pool into one sample
    set) or of (3, T, H, W) videos in [0, 1]. Returns the trained params.
    """
    vcfg = config["vae"]
    videos = _as_videos(dataset)
    if stream is None:
        stream = RandomStream(vcfg["seed"], 0)
    params = init_vae(stream, c_lat=vcfg["channels"], widths=tuple(vcfg["widths"]))
    opt = AdamW(params, lr=vcfg["lr"])
    steps = vcfg["steps"]
    cadence = max(steps // 10, 50)
    log = _NdjsonLog(out_dir, "train_log.ndjson", log_sink)
    try:
        for step in range(steps):
            t0 = time.time()
            opt.lr = cosine_lr(step, vcfg["lr"], vcfg["warmup"], steps)
            idx = stream.child(STEP_STREAM_BASE + step).integers(
                0, len(videos), (vcfg["batch"],))
            opt.zero_grad()
            loss = reconstruction_loss(params, videos[np.asarray(idx)])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite VAE loss at step {step + 1}")
            loss.backward()
            opt.step()
            log.write({"step": step + 1, "loss": float(loss.data),
                       "lr": opt.lr, "seconds": time.time() - t0})
            if out_dir is not None and ((step + 1) % cadence == 0 or step + 1 == steps):
                fname = f"ckpt_vae_step{step + 1:06d}.wvck"
                save_checkpoint(os.path.join(out_dir, fname), params,
                                step=step + 1, stage="vae", config=config,
                                optimizer=opt)
                write_latest(out_dir, fname, step + 1, "vae")
    finally:
        log.close()
    return params


def _stage_items(features: list, stage: str) -> list:
    """Sample units: (clip, view) pairs for "single", whole clips otherwise."""
    if stage == "single":
        return [(ci, vi) for ci, feat in enumerate(features)
                for vi in range(feat.views)]
    return list(range(len(features)))


def _assemble_batch(features, items, stage: str, cfg: dict, k: int,
                    st: RandomStream) -> TrainBatch:
    tcfg = cfg["train"]
    p_het = effective_p_hetero(cfg, stage)
    idx = st.integers(0, len(items), (tcfg["batch"],))
    x1, x0, f_s, f_d, pts, rays, styles = [], [], [], [], [], [], []
    paths, pres_s, pres_d = [], [], []
    for i in np.asarray(idx):
        if stage == "single":
            ci, vi = items[i]
            sel = slice(vi, vi + 1)
        else:
            ci, sel = items[i], slice(None)
        feat = features[ci]
        paths.append(sample_timestep_path(k, st, p_het))
        u = st.uniform_scalar()
        drop_d = u < tcfg["drop_depth_p"]
        drop_s = not drop_d and u < tcfg["drop_depth_p"] + tcfg["drop_sketch_p"]
        pres_s.append(0.0 if drop_s else 1.0)
        pres_d.append(0.0 if drop_d else 1.0)
        gauged = random_gauge(feat.pooled[sel], st)
        pts.append(normalize_points(gauged).points)
        x1.append(feat.x1[sel])
        x0.append(st.normal(feat.x1[sel].shape))
        f_s.append(feat.f_s[sel])
        f_d.append(feat.f_d[sel])
        rays.append(feat.rays[sel])
        styles.append(feat.styles[sel])
    return TrainBatch(x1=np.stack(x1), x0=np.stack(x0), f_s=np.stack(f_s),
                      f_d=np.stack(f_d), styles=np.stack(styles), paths=paths,
                      points=np.stack(pts), rays=np.stack(rays),
                      present_s=np.asarray(pres_s, np.float32),
                      present_d=np.asarray(pres_d, np.float32))


def init_flow_params(cfg: dict, stage: str = "single") -> dict:
    """Fresh DiT + fusion parameters from train.seed."""
    mc = stage_model_config(cfg, stage)
    seed = cfg["train"]["seed"]
    params = init_model_params(RandomStream(seed, 0), mc)
    params.update(init_moe(RandomStream(seed, 1), mc.c_lat))
    return params


def train_flow(features: list, cfg: dict, stage: str, *, params: dict | None = None,
               optimizer: AdamW | None = None, start_step: int = 0,
               out_dir=None, log_sink=None):
    """Run one stage for train.steps optimizer steps; returns (params, opt)."""
    if stage not in _STAGE_ORDER:
        raise ConfigError(f"unknown stage {stage!r}")
    if not features:
        raise ValueError("empty dataset")
    mc = stage_model_config(cfg, stage)
    tcfg = cfg["train"]
    if stage != "single" and any(f.views != mc.views for f in features):
        raise ValueError(f"stage {stage} needs {mc.views} views per clip")
    if params is None:
        params = init_flow_params(cfg, stage)
    if optimizer is None:
        optimizer = AdamW(params, lr=tcfg["lr"])
    items = _stage_items(features, stage)
    steps = tcfg["steps"]
    cadence = max(steps // 10, 50)
    log = _NdjsonLog(out_dir, "train_log.ndjson", log_sink)
    try:
        for step in range(start_step, steps):
            t0 = time.time()
            st = RandomStream(tcfg["seed"], STEP_STREAM_BASE + step)
            batch = _assemble_batch(features, items, stage, cfg, mc.views, st)
            report = train_step(batch, params, optimizer, mc,
                                lambda_wav=tcfg["lambda_wav"])
            log.write({"step": step + 1, "flow_loss": report["flow_loss"],
                       "wavelet_loss": report["wavelet_loss"],
                       "total": report["total"], "lr": optimizer.lr,
                       "seconds": time.time() - t0})
            if out_dir is not None and ((step + 1) % cadence == 0 or step + 1 == steps):
                fname = f"ckpt_{stage}_step{step + 1:06d}.wvck"
                save_checkpoint(os.path.join(out_dir, fname), params,
                                step=step + 1, stage=stage, config=cfg,
                                optimizer=optimizer)
                write_latest(out_dir, fname, step + 1, stage)
    finally:
        log.close()
    return params, optimizer


def check_stage_compatibility(ckpt: Checkpoint, cfg: dict, stage: str) -> str:
    """Validate resuming ``stage`` from ``ckpt``; "continue" or "transition".

    A stage continues its own checkpoints and transitions from the
    immediately prior stage; anything else (or a model-section mismatch,
    which would misalign parameters) is a configuration error.
    """
    if ckpt.stage == stage:
        mode = "continue"
    elif _STAGE_ORDER.get(ckpt.stage, -2) == _STAGE_ORDER[stage] - 1:
        mode = "transition"
    else:
        raise ConfigError(
            f"cannot run stage {stage!r} from a {ckpt.stage!r} checkpoint")
    if ckpt.config.get("model") != cfg["model"]:
        raise ConfigError("checkpoint model section differs from the run config")
    return mode


def run_stage(features: list, cfg: dict, resume: Checkpoint | None, *,
              out_dir=None, log_sink=None):
    """cmd_train semantics: resolve resume/transition rules, then train.

    Stage "single" may start fresh; "multi" and "hetero" require a prior
    checkpoint. Continuing restores the optimizer and step counter, a stage
    transition keeps only the weights.
    """
    stage = cfg["train"]["stage"]
    params = optimizer = None
    start_step = 0
    if resume is None:
        if stage != "single":
            raise ConfigError(f"stage {stage!r} requires --resume with the "
                              "previous stage's checkpoint")
    else:
        mode = check_stage_compatibility(resume, cfg, stage)
        params = model_params(resume)
        if mode == "continue":
            if resume.step >= cfg["train"]["steps"]:
                raise ConfigError(
                    f"checkpoint step {resume.step} is already at or past "
                    f"train.steps={cfg['train']['steps']}")
            optimizer = restore_optimizer(resume, params)
            start_step = resume.step
    return train_flow(features, cfg, stage, params=params, optimizer=optimizer,
                      start_step=start_step, out_dir=out_dir, log_sink=log_sink)


def sample_clip(feat: ClipFeatures, params: dict, cfg: dict, *,
                seed: int | None = None, steps: int | None = None,
                present=(True, True), frozen_latents=None,
                frozen_mask=None) -> np.ndarray:
    """Generate all unfrozen views of one clip; returns (K, C, ...) latents.

    ``present`` is (sketch, depth); dropping one samples in single-modality
    mode. ``frozen_mask``/``frozen_latents`` hold given views clean.
    """
    mc = stage_model_config(cfg, "multi")
    if feat.views != mc.views:
        raise ValueError(f"clip has {feat.views} views, model expects {mc.views}")
    present_s, present_d = float(present[0]), float(present[1])
    velocity = default_velocity_fn(feat.f_s, feat.f_d, present_s, present_d,
                                   normalize_points(feat.pooled).points,
                                   feat.rays, feat.styles, params, mc)
    sampler = SamplerConfig(
        steps=cfg["sample"]["steps"] if steps is None else steps,
        seed=cfg["sample"]["seed"] if seed is None else seed)
    if frozen_mask is None:
        frozen_mask = np.zeros(mc.views, bool)
        frozen_latents = np.zeros((mc.views,) + mc.latent_shape(), np.float32)
    return euler_sample(velocity, mc.latent_shape(), frozen_latents,
                        frozen_mask, sampler)


def extend_clip(feat: ClipFeatures, params: dict, cfg: dict, given: dict,
                target: int, *, seed: int | None = None,
                steps: int | None = None, present=(True, True)) -> np.ndarray:
    """Regenerate ``target`` with the ``given`` {view: latent} slots frozen."""
    mc = stage_model_config(cfg, "multi")
    present_s, present_d = float(present[0]), float(present[1])
    velocity = default_velocity_fn(feat.f_s, feat.f_d, present_s, present_d,
                                   normalize_points(feat.pooled).points,
                                   feat.rays, feat.styles, params, mc)
    sampler = SamplerConfig(
        steps=cfg["sample"]["steps"] if steps is None else steps,
        seed=cfg["sample"]["seed"] if seed is None else seed)
    return autoregressive_extend(given, target, velocity, mc.latent_shape(),
                                 mc, sampler)
