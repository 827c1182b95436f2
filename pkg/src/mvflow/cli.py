"""Command-line surface: gen-data, train-vae, train, sample, extend, eval.

Every command writes a provenance.json next to its artifacts capturing the
effective config, the data root, and the seeds, so outputs are replayable
from the provenance alone. Errors exit with a diagnostic line and a coded
status: 2 config, 3 io, 4 numeric.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, model_params, read_latest
from .config import ConfigError, check_consistency, default_config, load_config
from .dataset import DatasetConfig, generate_dataset, load_clip, load_manifest
from .metrics import cross_view_consistency, edge_f1, psnr, re_extract_edges
from .rng import RandomStream
from .scene import ClipBundle
from .tensor_io import TensorFileError, read_tensor, write_tensor
from .training import (clip_features, dataset_features, extend_clip,
                       run_stage, sample_clip, train_vae)
from .vae import vae_decode

EVAL_METRICS = ("psnr", "edge_f1", "xvc")


def _write_provenance(out_dir, doc: dict):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "provenance.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_run_config(path) -> dict:
    return default_config() if path is None else load_config(path)


def _resolve_clip(root, clip: str) -> str:
    name = f"clip_{int(clip):04d}" if clip.isdigit() else clip
    if name not in load_manifest(root)["clips"]:
        raise FileNotFoundError(f"clip {name!r} not found under {root}")
    return name


def _load_vae(path) -> dict:
    ckpt = load_checkpoint(path)
    if ckpt.stage != "vae":
        raise ConfigError(f"{path} is a {ckpt.stage!r} checkpoint, expected a VAE")
    return model_params(ckpt)


def _check_data_matches(root, cfg: dict):
    stored = load_manifest(root)["config"]
    for key in ("K", "T", "H", "W", "styles"):
        if stored[key] != cfg["data"][key]:
            raise ConfigError(
                f"dataset {key}={stored[key]} differs from config "
                f"data.{key}={cfg['data'][key]}")


def cmd_gen_data(args) -> None:
    cfg = _load_run_config(args.config)
    seed = cfg["data"]["seed"] if args.seed is None else args.seed
    out = cfg["data"]["root"] if args.out is None else args.out
    d = cfg["data"]
    dcfg = DatasetConfig(clips=d["clips"], K=d["K"], T=d["T"], H=d["H"],
                         W=d["W"], styles=d["styles"],
                         objects_min=d["objects_min"],
                         objects_max=d["objects_max"])
    generate_dataset(dcfg, out, seed)
    _write_provenance(out, {"command": "gen-data", "config": cfg,
                            "data": {"root": out}, "seeds": {"data": seed}})
    print(f"wrote {d['clips']} clips to {out}")


def cmd_train_vae(args) -> None:
    cfg = _load_run_config(args.config)
    bundles = [load_clip(args.data, name)
               for name in load_manifest(args.data)["clips"]]
    train_vae(bundles, cfg, RandomStream(cfg["vae"]["seed"], 0),
              out_dir=args.out)
    _write_provenance(args.out, {
        "command": "train-vae", "config": cfg, "data": {"root": args.data},
        "seeds": {"vae": cfg["vae"]["seed"]}})
    print(f"final checkpoint: {read_latest(args.out)}")


def cmd_train(args) -> None:
    cfg = _load_run_config(args.config)
    check_consistency(cfg)
    _check_data_matches(args.data, cfg)
    vae_params = _load_vae(args.vae)
    features = dataset_features(args.data, vae_params)
    resume = None if args.resume is None else load_checkpoint(args.resume)
    run_stage(features, cfg, resume, out_dir=args.out)
    _write_provenance(args.out, {
        "command": "train", "config": cfg, "data": {"root": args.data},
        "inputs": {"vae": args.vae, "resume": args.resume},
        "seeds": {"train": cfg["train"]["seed"]}})
    print(f"final checkpoint: {read_latest(args.out)}")


def _sampling_setup(args):
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.stage == "vae":
        raise ConfigError(f"{args.ckpt} is a VAE checkpoint, expected a model")
    cfg = ckpt.config
    params = model_params(ckpt)
    vae_params = _load_vae(args.vae)
    name = _resolve_clip(args.data, args.clip)
    feat = clip_features(load_clip(args.data, name), vae_params, name=name)
    steps = cfg["sample"]["steps"] if args.steps is None else args.steps
    seed = cfg["sample"]["seed"] if args.seed is None else args.seed
    return ckpt, cfg, params, vae_params, feat, name, steps, seed


def _write_video(out_dir, view: int, video01: np.ndarray) -> str:
    rgb = np.round(np.asarray(video01) * 255.0).clip(0, 255).astype(np.uint8)
    fname = f"gen_v{view}.wvt"
    write_tensor(rgb, os.path.join(out_dir, fname))
    return fname


def cmd_sample(args) -> None:
    ckpt, cfg, params, vae_params, feat, name, steps, seed = _sampling_setup(args)
    latents = sample_clip(feat, params, cfg, seed=seed, steps=steps)
    os.makedirs(args.out, exist_ok=True)
    views = [_write_video(args.out, k, vae_decode(vae_params, z))
             for k, z in enumerate(latents)]
    _write_provenance(args.out, {
        "command": "sample", "config": cfg,
        "data": {"root": args.data, "clip": name},
        "inputs": {"ckpt": args.ckpt, "vae": args.vae},
        "seeds": {"sample": seed}, "steps": steps, "views": views})
    print(f"wrote {len(views)} views to {args.out}")


def cmd_extend(args) -> None:
    ckpt, cfg, params, vae_params, feat, name, steps, seed = _sampling_setup(args)
    given = sorted({int(v) for v in args.given.split(",") if v != ""})
    target = int(args.target)
    joint = sample_clip(feat, params, cfg, seed=seed, steps=steps)
    latent = extend_clip(feat, params, cfg, {v: joint[v] for v in given},
                         target, seed=seed, steps=steps)
    os.makedirs(args.out, exist_ok=True)
    views = [_write_video(args.out, v, vae_decode(vae_params, joint[v]))
             for v in given]
    views.append(_write_video(args.out, target, vae_decode(vae_params, latent)))
    _write_provenance(args.out, {
        "command": "extend", "config": cfg,
        "data": {"root": args.data, "clip": name},
        "inputs": {"ckpt": args.ckpt, "vae": args.vae},
        "seeds": {"sample": seed}, "steps": steps,
        "given": given, "target": target, "views": views})
    print(f"wrote target view {target} and {len(given)} given views to {args.out}")


def _sample_dirs(pred) -> list:
    if os.path.exists(os.path.join(pred, "provenance.json")):
        return [pred]
    dirs = [os.path.join(pred, d) for d in sorted(os.listdir(pred))
            if os.path.exists(os.path.join(pred, d, "provenance.json"))]
    if not dirs:
        raise FileNotFoundError(f"no sample outputs (provenance.json) under {pred}")
    return dirs


def _eval_dir(sample_dir, data_root, metrics) -> tuple:
    with open(os.path.join(sample_dir, "provenance.json")) as fh:
        prov = json.load(fh)
    name = prov["data"]["clip"]
    bundle = load_clip(data_root, name)
    present = sorted(
        int(f[len("gen_v"):-len(".wvt")]) for f in os.listdir(sample_dir)
        if f.startswith("gen_v") and f.endswith(".wvt"))
    gen = [read_tensor(os.path.join(sample_dir, f"gen_v{k}.wvt")).astype(np.float32) / 255.0
           for k in present]
    refs = [bundle.views[k] for k in present]
    row = {}
    if "psnr" in metrics:
        row["psnr"] = float(np.mean(
            [psnr(g, r.rgb.astype(np.float32) / 255.0) for g, r in zip(gen, refs)]))
    if "edge_f1" in metrics:
        row["edge_f1"] = float(np.mean(
            [edge_f1(re_extract_edges(g), r.edges, tolerance=1)
             for g, r in zip(gen, refs)]))
    if "xvc" in metrics:
        if len(present) < 2:
            raise ConfigError("xvc needs at least two generated views")
        row["xvc"] = cross_view_consistency(gen, ClipBundle(refs, bundle.seed))
    return name, row


def cmd_eval(args) -> None:
    metrics = tuple(m for m in args.metrics.split(",") if m)
    for m in metrics:
        if m not in EVAL_METRICS:
            raise ConfigError(f"unknown metric {m!r}; choose from {EVAL_METRICS}")
    if not metrics:
        raise ConfigError("no metrics requested")
    clips = {}
    for sample_dir in _sample_dirs(args.pred):
        name, row = _eval_dir(sample_dir, args.data, metrics)
        clips[name] = row
    aggregate = {m: float(np.mean([row[m] for row in clips.values()]))
                 for m in metrics}
    report = {"clips": clips, "aggregate": aggregate}
    with open(args.out, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}: " + ", ".join(
        f"{m}={aggregate[m]:.4f}" for m in metrics))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvflow",
        description="Multi-view video-to-video rectified flow on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--config", help="JSON run config (defaults if omitted)")
    p.add_argument("--out", help="dataset directory (default: data.root)")
    p.add_argument("--seed", type=int, help="override data.seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-vae", help="fit the video codec")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("train", help="run one flow-training stage")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--vae", required=True, help="VAE checkpoint path")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue or transition from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate all views of one clip")
    p.add_argument("--ckpt", required=True, help="model checkpoint path")
    p.add_argument("--vae", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", required=True, help="clip index or name")
    p.add_argument("--steps", type=int, help="override sample.steps")
    p.add_argument("--seed", type=int, help="override sample.seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("extend", help="regenerate one view from given views")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vae", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--given", required=True, help="comma-separated view ids")
    p.add_argument("--target", required=True, type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("eval", help="score generated views against the oracle")
    p.add_argument("--pred", required=True, help="sample output dir (or parent)")
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", default="psnr,edge_f1,xvc")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        return _fail(2, exc)
    except (OSError, TensorFileError, json.JSONDecodeError) as exc:
        return _fail(3, exc)
    except (FloatingPointError, ZeroDivisionError, OverflowError) as exc:
        return _fail(4, exc)
    except ValueError as exc:
        return _fail(2, exc)
    return 0


def _fail(code: int, exc: Exception) -> int:
    print(f"error: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
