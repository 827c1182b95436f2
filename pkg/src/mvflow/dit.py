"""DiT velocity network with factorized intra-view / cross-view attention.

Each view's tokens are modulated by that view's own (timestep, style)
conditioning through adaptive layer norm; geometry enters additively as
pooled-point and camera-ray injections. Heterogeneous per-view timesteps
are first-class: tau is always a per-view vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (attention, layer_norm, linear, merge_heads, parameter,
                 sinusoidal_features, split_heads, zeros_param)

TAU_DIM = 64


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    blocks: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    views: int = 3
    styles: int = 4
    c_lat: int = 8
    t_lat: int = 2
    h_lat: int = 8
    w_lat: int = 8
    use_pointcloud: bool = True
    use_rays: bool = True
    use_crossview: bool = True

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"embed dim {self.d} not divisible by {self.heads} heads")
        if self.views < 1:
            raise ValueError("need at least one view")
        if min(self.blocks, self.mlp_ratio, self.styles, self.c_lat,
               self.t_lat, self.h_lat, self.w_lat) < 1:
            raise ValueError("all model extents must be positive")

    @property
    def tokens_per_view(self) -> int:
        return self.t_lat * self.h_lat * self.w_lat

    def latent_shape(self):
        return (self.c_lat, self.t_lat, self.h_lat, self.w_lat)


def init_model_params(stream, config: ModelConfig) -> dict:
    """All DiT weights, keyed "dit.*". Modulations, injection-MLP output
    layers, the positional table, and the velocity head start at zero so the
    initial network is near-identity with zero output."""
    d, c = config.d, config.c_lat
    params: dict[str, Tensor] = {}
    counter = [0]

    def randn(name, shape):
        counter[0] += 1
        params[name] = parameter(stream.child(counter[0]), shape, name=name)

    def zeros(name, shape):
        params[name] = zeros_param(shape, name=name)

    randn("dit.token_in.w", (c, d))
    zeros("dit.token_in.b", (d,))
    zeros("dit.pos_embed", (config.tokens_per_view, d))
    randn("dit.time_mlp.l1.w", (TAU_DIM, d))
    zeros("dit.time_mlp.l1.b", (d,))
    randn("dit.time_mlp.l2.w", (d, d))
    zeros("dit.time_mlp.l2.b", (d,))
    params["dit.style_embed"] = Tensor(
        (stream.child(999).normal((config.styles, d)) * 0.02).astype(np.float32),
        requires_grad=True, name="dit.style_embed")
    randn("dit.point_mlp.l1.w", (3, d))
    zeros("dit.point_mlp.l1.b", (d,))
    zeros("dit.point_mlp.l2.w", (d, c))
    zeros("dit.point_mlp.l2.b", (c,))
    randn("dit.ray_mlp.l1.w", (6, d))
    zeros("dit.ray_mlp.l1.b", (d,))
    zeros("dit.ray_mlp.l2.w", (d, d))
    zeros("dit.ray_mlp.l2.b", (d,))
    for i in range(config.blocks):
        for sub in ("intra", "cross"):
            for proj in ("wq", "wk", "wv", "wo"):
                randn(f"dit.block{i}.{sub}.{proj}", (d, d))
        randn(f"dit.block{i}.mlp.l1.w", (d, config.mlp_ratio * d))
        zeros(f"dit.block{i}.mlp.l1.b", (config.mlp_ratio * d,))
        randn(f"dit.block{i}.mlp.l2.w", (config.mlp_ratio * d, d))
        zeros(f"dit.block{i}.mlp.l2.b", (d,))
        zeros(f"dit.block{i}.mod.w", (d, 9 * d))
        zeros(f"dit.block{i}.mod.b", (9 * d,))
    zeros("dit.final.mod.w", (d, 2 * d))
    zeros("dit.final.mod.b", (2 * d,))
    zeros("dit.head.w", (d, c))
    zeros("dit.head.b", (c,))
    return params


def timestep_embed(tau, params: dict) -> Tensor:
    """tau (scalar or array in [0,1]) -> (..., D) conditioning vector."""
    feats = ad.as_tensor(sinusoidal_features(tau, TAU_DIM))
    h = ad.silu(linear(feats, params["dit.time_mlp.l1.w"], params["dit.time_mlp.l1.b"]))
    return linear(h, params["dit.time_mlp.l2.w"], params["dit.time_mlp.l2.b"])


def _mlp2(x: Tensor, params: dict, prefix: str, act=ad.silu) -> Tensor:
    h = act(linear(x, params[f"{prefix}.l1.w"], params[f"{prefix}.l1.b"]))
    return linear(h, params[f"{prefix}.l2.w"], params[f"{prefix}.l2.b"])


def _check_grid(arr, expect, name):
    if tuple(arr.shape) != tuple(expect):
        raise ValueError(f"{name} has shape {tuple(arr.shape)}, expected {tuple(expect)}")


def embed_inputs(x_tau, c_tau, points, rays, config: ModelConfig, params: dict) -> Tensor:
    """Latent grids -> token grid (N, K, L, D).

    x_tau/c_tau: (N, K, C, T, H, W); points: (N, K, T, H, W, 3) normalized;
    rays: (N, K, T, H, W, 6) Plucker coordinates. points/rays may be None
    when the matching flag is off.
    """
    x = ad.as_tensor(x_tau)
    n = x.shape[0]
    k = config.views
    c, t, h, w = config.latent_shape()
    _check_grid(x, (n, k, c, t, h, w), "x_tau")
    cc = ad.as_tensor(c_tau)
    _check_grid(cc, x.shape, "c_tau")
    grid = x + cc
    grid = ad.transpose(grid, (0, 1, 3, 4, 5, 2))            # channels-last cells
    if config.use_pointcloud:
        pts = ad.as_tensor(points, dtype=np.float32)
        _check_grid(pts, (n, k, t, h, w, 3), "points")
        grid = grid + _mlp2(pts, params, "dit.point_mlp")
    tokens = linear(grid, params["dit.token_in.w"], params["dit.token_in.b"])
    if config.use_rays:
        ray = ad.as_tensor(rays, dtype=np.float32)
        _check_grid(ray, (n, k, t, h, w, 6), "rays")
        tokens = tokens + _mlp2(ray, params, "dit.ray_mlp")
    tokens = ad.reshape(tokens, (n, k, config.tokens_per_view, config.d))
    return tokens + params["dit.pos_embed"]


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return x * (1.0 + scale) + shift


def _self_attention(x: Tensor, params: dict, prefix: str, heads: int) -> Tensor:
    q = split_heads(linear(x, params[f"{prefix}.wq"]), heads)
    k = split_heads(linear(x, params[f"{prefix}.wk"]), heads)
    v = split_heads(linear(x, params[f"{prefix}.wv"]), heads)
    return linear(merge_heads(attention(q, k, v)), params[f"{prefix}.wo"])


def intra_view_attention(tokens: Tensor, mod, params: dict, prefix: str,
                         heads: int) -> Tensor:
    """Self-attention over each view's full token set; (N, K, L, D) in/out.

    ``mod`` is the (shift, scale, gate) triple, each (N, K, 1, D).
    """
    shift, scale, gate = mod
    n, k, l, d = tokens.shape
    h = _modulate(layer_norm(tokens), shift, scale)
    h = ad.reshape(h, (n * k, l, d))
    h = _self_attention(h, params, prefix, heads)
    return tokens + gate * ad.reshape(h, (n, k, l, d))


def cross_view_attention(tokens: Tensor, mod, params: dict, prefix: str,
                         heads: int, config: ModelConfig) -> Tensor:
    """Joint attention over all views' tokens of one latent frame at a time."""
    shift, scale, gate = mod
    n, k, l, d = tokens.shape
    t, hw = config.t_lat, config.h_lat * config.w_lat
    h = _modulate(layer_norm(tokens), shift, scale)
    h = ad.reshape(h, (n, k, t, hw, d))
    h = ad.transpose(h, (0, 2, 1, 3, 4))          # (N, T, K, HW, D)
    h = ad.reshape(h, (n * t, k * hw, d))
    h = _self_attention(h, params, prefix, heads)
    h = ad.reshape(h, (n, t, k, hw, d))
    h = ad.transpose(h, (0, 2, 1, 3, 4))
    return tokens + gate * ad.reshape(h, (n, k, l, d))


def _conditioning(tau, styles, config: ModelConfig, params: dict) -> Tensor:
    """Per-view conditioning vectors (N, K, D) from timesteps and style ids."""
    style_arr = np.asarray(styles)
    if style_arr.shape[-1] != config.views:
        raise ValueError(f"need {config.views} style ids per sample, got {style_arr.shape}")
    if np.issubdtype(style_arr.dtype, np.floating) or np.any(style_arr < 0) \
            or np.any(style_arr >= config.styles):
        raise ValueError(f"style ids must be integers in [0, {config.styles})")
    return timestep_embed(tau, params) + params["dit.style_embed"][style_arr]


def dit_forward(x_tau, c_tau, points, rays, tau, styles, params: dict,
                config: ModelConfig) -> Tensor:
    """Velocity prediction with the same extents as ``x_tau``.

    Accepts (K, C, T, H, W) grids with (K,) tau/styles, or batched
    (N, K, C, T, H, W) with (N, K) conditioning.
    """
    squeeze = ad.as_tensor(x_tau).ndim == 5
    if squeeze:
        x_tau = ad.reshape(ad.as_tensor(x_tau), (1,) + ad.as_tensor(x_tau).shape)
        c_tau = ad.reshape(ad.as_tensor(c_tau), x_tau.shape)
        points = None if points is None else np.asarray(points)[None]
        rays = None if rays is None else np.asarray(rays)[None]
        tau = np.asarray(tau)[None]
        styles = np.asarray(styles)[None]
    n, k = ad.as_tensor(x_tau).shape[:2]
    tau_arr = np.broadcast_to(np.asarray(tau, np.float64), (n, k))

    tokens = embed_inputs(x_tau, c_tau, points, rays, config, params)
    cond = _conditioning(tau_arr, styles, config, params)     # (N, K, D)

    for i in range(config.blocks):
        mods = linear(ad.silu(cond), params[f"dit.block{i}.mod.w"],
                      params[f"dit.block{i}.mod.b"])
        mods = ad.reshape(mods, (n, k, 1, 9, config.d))
        chunk = [mods[:, :, :, j] for j in range(9)]
        tokens = intra_view_attention(tokens, chunk[0:3], params,
                                      f"dit.block{i}.intra", config.heads)
        if config.use_crossview and k > 1:
            tokens = cross_view_attention(tokens, chunk[3:6], params,
                                          f"dit.block{i}.cross", config.heads, config)
        shift, scale, gate = chunk[6:9]
        h = _modulate(layer_norm(tokens), shift, scale)
        tokens = tokens + gate * _mlp2(h, params, f"dit.block{i}.mlp", act=ad.gelu)

    fmod = linear(ad.silu(cond), params["dit.final.mod.w"], params["dit.final.mod.b"])
    fmod = ad.reshape(fmod, (n, k, 1, 2, config.d))
    h = _modulate(layer_norm(tokens), fmod[:, :, :, 0], fmod[:, :, :, 1])
    out = linear(h, params["dit.head.w"], params["dit.head.b"])

    c, t, hh, ww = config.latent_shape()
    out = ad.reshape(out, (n, k, t, hh, ww, c))
    out = ad.transpose(out, (0, 1, 5, 2, 3, 4))
    if squeeze:
        out = ad.reshape(out, out.shape[1:])
    return out
