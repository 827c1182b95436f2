"""Mixture-of-experts fusion of sketch and depth control latents.

Two small conv experts process each modality, a frame-wise bidirectional
cross-attention lets them exchange information, and a timestep-conditioned
gate blends the results into one control grid per latent voxel:

    c_tau = alpha * e_s + (1 - alpha) * e_d
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conv import conv3d
from .nn import attention, parameter, sinusoidal_features, split_heads, merge_heads, zeros_param

TAU_DIM = 64


def init_moe(stream, c_lat: int = 8) -> dict:
    """Parameter dict for the fusion block; all keys prefixed "moe."."""
    params: dict[str, Tensor] = {}

    def conv_param(name, shape):
        params[name + ".w"] = parameter(stream.child(len(params)), shape, name=name + ".w")
        params[name + ".b"] = zeros_param((shape[0],), name=name + ".b")

    for mod in ("s", "d"):
        conv_param(f"moe.expert_{mod}.c1", (c_lat, c_lat, 3, 3, 3))
        conv_param(f"moe.expert_{mod}.c2", (c_lat, c_lat, 3, 3, 3))
    # cross-attention: 2 heads of dim c_lat, separate weights per direction
    inner = 2 * c_lat
    for direction in ("sd", "ds"):
        for proj, shape in (("wq", (c_lat, inner)), ("wk", (c_lat, inner)),
                            ("wv", (c_lat, inner)), ("wo", (inner, c_lat))):
            name = f"moe.xattn_{direction}.{proj}"
            params[name] = parameter(stream.child(len(params)), shape, name=name)
    gate_in = 3 * c_lat + TAU_DIM + 2
    conv_param("moe.gate.c1", (2 * c_lat, gate_in, 1, 1, 1))
    conv_param("moe.gate.c2", (1, 2 * c_lat, 1, 1, 1))
    # learned presence flags, exposed to the gate as constant channels
    params["moe.flag_s"] = Tensor(np.ones((1,), np.float32), requires_grad=True, name="moe.flag_s")
    params["moe.flag_d"] = Tensor(np.ones((1,), np.float32), requires_grad=True, name="moe.flag_d")
    return params


def _expert(x: Tensor, params: dict, mod: str) -> Tensor:
    h = ad.silu(conv3d(x, params[f"moe.expert_{mod}.c1.w"],
                       params[f"moe.expert_{mod}.c1.b"], padding=1))
    return conv3d(h, params[f"moe.expert_{mod}.c2.w"],
                  params[f"moe.expert_{mod}.c2.b"], padding=1)


def _to_tokens(x: Tensor):
    """(N, C, T, H, W) -> (N*T, H*W, C)."""
    n, c, t, h, w = x.shape
    seq = ad.transpose(x, (0, 2, 3, 4, 1))
    return ad.reshape(seq, (n * t, h * w, c))


def _from_tokens(tok: Tensor, shape) -> Tensor:
    n, c, t, h, w = shape
    grid = ad.reshape(tok, (n, t, h, w, c))
    return ad.transpose(grid, (0, 4, 1, 2, 3))


def _cross_attend(q_src: Tensor, kv_src: Tensor, params: dict, direction: str) -> Tensor:
    """One direction of frame-wise cross-attention, before the residual."""
    p = f"moe.xattn_{direction}"
    q = split_heads(ad.matmul(q_src, params[f"{p}.wq"]), 2)
    k = split_heads(ad.matmul(kv_src, params[f"{p}.wk"]), 2)
    v = split_heads(ad.matmul(kv_src, params[f"{p}.wv"]), 2)
    return ad.matmul(merge_heads(attention(q, k, v)), params[f"{p}.wo"])


def _flag_channel(flag: Tensor, present: np.ndarray, grid_shape) -> Tensor:
    """Learned scalar flag * per-sample presence, broadcast to (N,1,T,H,W)."""
    n = grid_shape[0]
    mask = np.zeros((n, 1) + tuple(grid_shape[2:]), dtype=np.float32)
    mask += present.reshape(n, 1, 1, 1, 1)
    return ad.mul(ad.reshape(flag, (1, 1, 1, 1, 1)), mask)


def _as_batch(x, name):
    t = ad.as_tensor(x)
    if t.ndim == 4:
        t = ad.reshape(t, (1,) + t.shape)
    if t.ndim != 5:
        raise ValueError(f"{name} must be (C,T,H,W) or (N,C,T,H,W), got {t.shape}")
    return t


def moe_fuse(x_tau, f_s, f_d, tau, present_s=True, present_d=True,
             params: dict | None = None, return_parts: bool = False):
    """Fuse control latents into c_tau with the same extents as x_tau.

    Accepts single grids (C, T, H, W) with scalar tau/presence, or batches
    (N, C, T, H, W) with per-sample vectors. A modality marked absent is
    zeroed before its expert; at least one must be present per sample.
    """
    squeeze = ad.as_tensor(x_tau).ndim == 4
    x = _as_batch(x_tau, "x_tau")
    fs = _as_batch(f_s, "f_s")
    fd = _as_batch(f_d, "f_d")
    if fs.shape != x.shape or fd.shape != x.shape:
        raise ValueError(f"latent extents differ: {x.shape}, {fs.shape}, {fd.shape}")
    n = x.shape[0]
    ps = np.broadcast_to(np.asarray(present_s, np.float32), (n,))
    pd = np.broadcast_to(np.asarray(present_d, np.float32), (n,))
    if np.any((ps == 0) & (pd == 0)):
        raise ValueError("at least one modality must be present")
    tau_vec = np.broadcast_to(np.asarray(tau, np.float64), (n,))

    fs = fs * ps.reshape(n, 1, 1, 1, 1)
    fd = fd * pd.reshape(n, 1, 1, 1, 1)
    e_s = _expert(fs, params, "s")
    e_d = _expert(fd, params, "d")

    tok_s = _to_tokens(e_s)
    tok_d = _to_tokens(e_d)
    e_s = e_s + _from_tokens(_cross_attend(tok_s, tok_d, params, "sd"), e_s.shape)
    e_d = e_d + _from_tokens(_cross_attend(tok_d, tok_s, params, "ds"), e_d.shape)

    tau_feat = sinusoidal_features(tau_vec, TAU_DIM)          # (N, 64)
    tau_grid = np.ascontiguousarray(np.broadcast_to(
        tau_feat.reshape(n, TAU_DIM, 1, 1, 1), (n, TAU_DIM) + tuple(x.shape[2:])))
    gate_in = ad.concatenate([
        x, e_s, e_d, ad.as_tensor(tau_grid),
        _flag_channel(params["moe.flag_s"], ps, x.shape),
        _flag_channel(params["moe.flag_d"], pd, x.shape),
    ], axis=1)
    h = ad.silu(conv3d(gate_in, params["moe.gate.c1.w"], params["moe.gate.c1.b"]))
    alpha = ad.sigmoid(conv3d(h, params["moe.gate.c2.w"], params["moe.gate.c2.b"]))

    c_tau = alpha * e_s + (1.0 - alpha) * e_d
    if squeeze:
        c_tau = ad.reshape(c_tau, c_tau.shape[1:])
        alpha = ad.reshape(alpha, alpha.shape[1:])
        e_s = ad.reshape(e_s, e_s.shape[1:])
        e_d = ad.reshape(e_d, e_d.shape[1:])
    if return_parts:
        return c_tau, {"alpha": alpha, "e_s": e_s, "e_d": e_d}
    return c_tau
