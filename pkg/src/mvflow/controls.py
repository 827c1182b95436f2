"""Control-signal preparation: depth colorization and latent encoding.

Sketch and depth streams ride through the same frozen video codec as RGB,
so both are first lifted to 3-channel videos in [0, 1].
"""

from __future__ import annotations

import numpy as np

from .scene import DEPTH_SENTINEL
from .vae import vae_encode


def colorize_depth(depth: np.ndarray) -> np.ndarray:
    """Map a (T, H, W) depth video to a (3, T, H, W) color-coded RGB video.

    Works in disparity (1/z), min-max normalized over foreground pixels of
    the whole clip; background (sentinel) pixels get d_hat = 0. The ramp is
    (r, g, b) = (d_hat, 4*d_hat*(1-d_hat), 1-d_hat): near red, far blue.
    """
    z = np.asarray(depth, dtype=np.float32)
    if z.ndim != 3:
        raise ValueError(f"expected (T, H, W) depth, got {z.shape}")
    if np.any(z <= 0):
        raise ValueError("depths must be positive")
    fg = z < DEPTH_SENTINEL
    if not np.any(fg):
        raise ValueError("clip contains no foreground depth")
    disp = np.where(fg, 1.0 / z, 0.0)
    lo = disp[fg].min()
    hi = disp[fg].max()
    if hi > lo:
        d_hat = np.where(fg, (disp - lo) / (hi - lo), 0.0)
    else:
        d_hat = fg.astype(np.float32)  # constant-depth foreground
    rgb = np.stack([d_hat, 4.0 * d_hat * (1.0 - d_hat), 1.0 - d_hat])
    return rgb.astype(np.float32)


def encode_controls(sketch: np.ndarray, depth: np.ndarray, vae: dict):
    """Encode a clip's (sketch, depth) pair into latent feature maps (f_s, f_d).

    The sketch is replicated to 3 channels; depth is colorized. The codec is
    used frozen (no gradients flow into it here).
    """
    s = np.asarray(sketch)
    z = np.asarray(depth)
    if s.shape != z.shape or s.ndim != 3:
        raise ValueError(f"sketch/depth shape mismatch: {s.shape} vs {z.shape}")
    sketch_rgb = np.broadcast_to(s.astype(np.float32), (3,) + s.shape)
    f_s = vae_encode(vae, np.ascontiguousarray(sketch_rgb))
    f_d = vae_encode(vae, colorize_depth(z))
    return f_s, f_d
