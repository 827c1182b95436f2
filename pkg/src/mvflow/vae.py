"""Deterministic video autoencoder with 8x8x8 compression.

Plain MSE autoencoder (no sampling, no KL): three stride-2 conv stages down,
a mirrored stack of three stride-2 transposed convs up. Videos are float
(3, T, H, W) in [0, 1]; latents are (C_lat, T/8, H/8, W/8).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conv import conv3d, conv_transpose3d
from .nn import parameter, zeros_param


def init_vae(stream, c_lat: int = 8, widths: tuple = (20, 64, 128)) -> dict:
    """Named parameter dict; keys are stable across runs (checkpoint names).

    ``widths`` gives channel counts at /2, /4 and /8 resolution. The deep
    levels run on few voxels, so most capacity goes there; the full-res tail
    stays slim (stride-2 transpose plus a 1x1x1 head) to bound step cost.
    """
    w1, w2, w3 = widths
    shapes = {
        "vae.enc1.w": (w1, 3, 3, 3, 3),
        "vae.enc2.w": (w2, w1, 3, 3, 3),
        "vae.enc3.w": (w3, w2, 3, 3, 3),
        "vae.enc4.w": (c_lat, w3, 3, 3, 3),
        "vae.dec1.w": (w3, c_lat, 3, 3, 3),
        "vae.dec2.w": (w3, w2, 3, 3, 3),   # transposed: (C_in, C_out, k)
        "vae.dec3.w": (w2, w1, 3, 3, 3),
        "vae.dec4.w": (w1, w1, 3, 3, 3),
        "vae.out.w": (3, w1, 1, 1, 1),
    }
    params = {}
    for name, shape in shapes.items():
        params[name] = parameter(stream.child(len(params)), shape, name=name)
        bias_dim = shape[1] if name.startswith("vae.dec") and name != "vae.dec1.w" else shape[0]
        params[name.replace(".w", ".b")] = zeros_param((bias_dim,), name=name.replace(".w", ".b"))
    return params


def _check_video_extents(shape):
    if len(shape) != 4 or shape[0] != 3:
        raise ValueError(f"expected (3, T, H, W) video, got {shape}")
    if any(d % 8 for d in shape[1:]):
        raise ValueError(f"T, H, W must be divisible by 8, got {shape[1:]}")


def encode_op(params: dict, video) -> Tensor:
    """Differentiable encoder; video (3, T, H, W) or (N, 3, T, H, W)."""
    x = ad.as_tensor(video)
    _check_video_extents(x.shape[-4:])
    h = ad.silu(conv3d(x, params["vae.enc1.w"], params["vae.enc1.b"], stride=2, padding=1))
    h = ad.silu(conv3d(h, params["vae.enc2.w"], params["vae.enc2.b"], stride=2, padding=1))
    h = ad.silu(conv3d(h, params["vae.enc3.w"], params["vae.enc3.b"], stride=2, padding=1))
    return conv3d(h, params["vae.enc4.w"], params["vae.enc4.b"], stride=1, padding=1)


def decode_op(params: dict, latent) -> Tensor:
    """Differentiable decoder; output is not clamped (training target space)."""
    z = ad.as_tensor(latent)
    h = ad.silu(conv3d(z, params["vae.dec1.w"], params["vae.dec1.b"], stride=1, padding=1))
    h = ad.silu(conv_transpose3d(h, params["vae.dec2.w"], params["vae.dec2.b"],
                                 stride=2, padding=1, output_padding=1))
    h = ad.silu(conv_transpose3d(h, params["vae.dec3.w"], params["vae.dec3.b"],
                                 stride=2, padding=1, output_padding=1))
    h = ad.silu(conv_transpose3d(h, params["vae.dec4.w"], params["vae.dec4.b"],
                                 stride=2, padding=1, output_padding=1))
    return conv3d(h, params["vae.out.w"], params["vae.out.b"], stride=1, padding=0)


def vae_encode(params: dict, video: np.ndarray) -> np.ndarray:
    """Deterministic codec entry point; returns a float32 latent array."""
    with ad.no_grad():
        return encode_op(params, np.asarray(video, dtype=np.float32)).data


def vae_decode(params: dict, latent: np.ndarray) -> np.ndarray:
    """Decode and clamp to [0, 1]."""
    with ad.no_grad():
        out = decode_op(params, np.asarray(latent, dtype=np.float32)).data
    return np.clip(out, 0.0, 1.0)


def reconstruction_loss(params: dict, videos) -> Tensor:
    """Mean squared reconstruction error over a batch (N, 3, T, H, W)."""
    x = ad.as_tensor(videos)
    err = decode_op(params, encode_op(params, x)) - x
    return ad.tmean(err * err)
