"""Run configuration: a strict JSON document with documented defaults.

Sections and defaults (every key below is the complete schema; unknown
sections or keys are rejected so typos cannot silently fall back):

data    root="data" clips=8 K=3 T=16 H=64 W=64 styles=4 objects_min=2
        objects_max=4 seed=0
vae     channels=8 widths=[32,112,224] lr=1.2e-3 warmup=100 steps=2000
        batch=4 seed=0
model   d=64 blocks=4 heads=4 mlp_ratio=4 views=3 styles=4 c_lat=8
        t_lat=2 h_lat=8 w_lat=8 use_pointcloud=true use_rays=true
        use_crossview=true
train   stage="single" lr=1e-4 steps=1000 batch=2 p_hetero=0.5
        lambda_wav=0.1 drop_depth_p=0.1 drop_sketch_p=0.1 seed=0
sample  steps=30 seed=0

The merged (defaults-applied) document is what every checkpoint echoes, so
an artifact always carries the full configuration that produced it.
"""

from __future__ import annotations

import copy
import json

from .dit import ModelConfig

STAGES = ("single", "multi", "hetero")

DEFAULTS = {
    "data": {
        "root": "data", "clips": 8, "K": 3, "T": 16, "H": 64, "W": 64,
        "styles": 4, "objects_min": 2, "objects_max": 4, "seed": 0,
    },
    "vae": {
        "channels": 8, "widths": [32, 112, 224], "lr": 1.2e-3,
        "warmup": 100, "steps": 2000, "batch": 4, "seed": 0,
    },
    "model": {
        "d": 64, "blocks": 4, "heads": 4, "mlp_ratio": 4, "views": 3,
        "styles": 4, "c_lat": 8, "t_lat": 2, "h_lat": 8, "w_lat": 8,
        "use_pointcloud": True, "use_rays": True, "use_crossview": True,
    },
    "train": {
        "stage": "single", "lr": 1e-4, "steps": 1000, "batch": 2,
        "p_hetero": 0.5, "lambda_wav": 0.1, "drop_depth_p": 0.1,
        "drop_sketch_p": 0.1, "seed": 0,
    },
    "sample": {"steps": 30, "seed": 0},
}

_FLOAT_KEYS = {
    ("vae", "lr"), ("train", "lr"), ("train", "p_hetero"),
    ("train", "lambda_wav"), ("train", "drop_depth_p"),
    ("train", "drop_sketch_p"),
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _check_type(section: str, key: str, value, default):
    where = f"{section}.{key}"
    if (section, key) in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if (not isinstance(value, (list, tuple)) or not value
                or any(isinstance(v, bool) or not isinstance(v, int) for v in value)):
            raise ConfigError(f"{where} must be a list of integers, got {value!r}")
        return list(value)
    raise AssertionError(f"unhandled default type for {where}")


def _positive(cfg, section, keys):
    for key in keys:
        if cfg[section][key] <= 0:
            raise ConfigError(f"{section}.{key} must be positive")


def _validate_values(cfg: dict):
    _positive(cfg, "data", ("clips", "K", "T", "H", "W", "styles"))
    for ext in ("T", "H", "W"):
        if cfg["data"][ext] % 8:
            raise ConfigError(f"data.{ext} must be divisible by 8")
    if not 1 <= cfg["data"]["objects_min"] <= cfg["data"]["objects_max"]:
        raise ConfigError("data.objects_min..objects_max must be a valid range")
    _positive(cfg, "vae", ("channels", "lr", "steps", "batch"))
    if len(cfg["vae"]["widths"]) != 3 or min(cfg["vae"]["widths"]) < 1:
        raise ConfigError("vae.widths must be three positive level widths")
    if cfg["vae"]["warmup"] < 0:
        raise ConfigError("vae.warmup must be non-negative")
    if cfg["train"]["stage"] not in STAGES:
        raise ConfigError(f"train.stage must be one of {STAGES}")
    _positive(cfg, "train", ("lr", "steps", "batch"))
    if not 0.0 <= cfg["train"]["p_hetero"] <= 1.0:
        raise ConfigError("train.p_hetero must lie in [0, 1]")
    if cfg["train"]["lambda_wav"] < 0:
        raise ConfigError("train.lambda_wav must be non-negative")
    pd, ps = cfg["train"]["drop_depth_p"], cfg["train"]["drop_sketch_p"]
    if min(pd, ps) < 0 or pd + ps > 1.0:
        raise ConfigError("modality drop probabilities must be >= 0 and sum to <= 1")
    _positive(cfg, "sample", ("steps",))
    for section in ("data", "vae", "train", "sample"):
        if cfg[section]["seed"] < 0:
            raise ConfigError(f"{section}.seed must be non-negative")


def merge_config(user: dict | None) -> dict:
    """Defaults overlaid with ``user``; unknown sections/keys rejected."""
    cfg = default_config()
    if user is None:
        user = {}
    if not isinstance(user, dict):
        raise ConfigError("config document must be a JSON object")
    for section, body in user.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for key, value in body.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            cfg[section][key] = _check_type(section, key, value, cfg[section][key])
    _validate_values(cfg)
    return cfg


def load_config(path) -> dict:
    """Read a JSON config file and merge it over the defaults."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return merge_config(doc)


def check_consistency(cfg: dict):
    """Cross-section checks needed before training or sampling."""
    if cfg["model"]["c_lat"] != cfg["vae"]["channels"]:
        raise ConfigError("model.c_lat must equal vae.channels")
    if cfg["model"]["views"] != cfg["data"]["K"]:
        raise ConfigError("model.views must equal data.K")
    if cfg["model"]["styles"] != cfg["data"]["styles"]:
        raise ConfigError("model.styles must equal data.styles")
    for mkey, dkey in (("t_lat", "T"), ("h_lat", "H"), ("w_lat", "W")):
        if cfg["model"][mkey] * 8 != cfg["data"][dkey]:
            raise ConfigError(f"model.{mkey} must equal data.{dkey}/8")


def stage_model_config(cfg: dict, stage: str) -> ModelConfig:
    """ModelConfig for one training stage; "single" runs one view with the
    cross-view path disabled, the other stages run the full view set."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    fields = dict(cfg["model"])
    if stage == "single":
        fields["views"] = 1
        fields["use_crossview"] = False
    try:
        return ModelConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def effective_p_hetero(cfg: dict, stage: str) -> float:
    return cfg["train"]["p_hetero"] if stage == "hetero" else 0.0
