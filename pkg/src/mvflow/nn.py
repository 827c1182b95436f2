"""Layer helpers on top of the autodiff engine.

Parameters live in plain ``dict[str, Tensor]`` collections owned by each
model; these functions are stateless. ``layer_norm`` is a fused primitive
(closed-form backward) because it sits inside every transformer block.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _accumulate, make_op


def parameter(rs, shape, scale=None, name=None) -> Tensor:
    """Gaussian-initialized parameter; default std = 1/sqrt(fan_in).

    fan_in is shape[0] for (in, out) matrices and prod(shape[1:]) for conv
    kernels (O, C, k, k, k).
    """
    if scale is None:
        fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
        scale = 1.0 / np.sqrt(fan_in)
    data = (rs.normal(shape) * scale).astype(np.float32)
    return Tensor(data, requires_grad=True, name=name)


def zeros_param(shape, name=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True, name=name)


def sinusoidal_features(tau, dim: int = 64) -> np.ndarray:
    """Sinusoidal position features of shape tau.shape + (dim,).

    Frequencies 10000**(-2i/dim) for i in [0, dim/2); sin block first, then
    cos block, so tau=0 maps to (0,...,0, 1,...,1).
    """
    if dim % 2:
        raise ValueError(f"feature dim must be even, got {dim}")
    t = np.asarray(tau, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"timestep out of [0, 1]: {t}")
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    angles = t[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1).astype(np.float32)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (..., in) @ w (in, out) + b."""
    out = ad.matmul(x, w)
    if b is not None:
        out = ad.add(out, b)
    return out


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; affine terms optional."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat
    if gamma is not None:
        data = data * gamma.data
    if beta is not None:
        data = data + beta.data
    parents = tuple(p for p in (x, gamma, beta) if p is not None)

    def backward(g):
        gx = g * gamma.data if gamma is not None else g
        if x.requires_grad or x._parents:
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, (gx - m1 - xhat * m2) * inv)
        if gamma is not None and (gamma.requires_grad or gamma._parents):
            red = tuple(range(g.ndim - gamma.data.ndim))
            _accumulate(gamma, (g * xhat).sum(axis=red))
        if beta is not None and (beta.requires_grad or beta._parents):
            red = tuple(range(g.ndim - beta.data.ndim))
            _accumulate(beta, g.sum(axis=red))

    return make_op(data.astype(x.dtype, copy=False), parents, backward)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B, L, D) -> (B, H, L, D/H)."""
    b, l, d = x.shape
    if d % n_heads:
        raise ValueError(f"embed dim {d} not divisible by {n_heads} heads")
    return ad.transpose(ad.reshape(x, (b, l, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(B, H, L, Dh) -> (B, L, H*Dh)."""
    b, h, l, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, l, h * dh))


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis."""
    dh = q.shape[-1]
    scores = ad.matmul(q, ad.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    scores = ad.mul(scores, 1.0 / np.sqrt(dh))
    return ad.matmul(ad.softmax(scores, axis=-1), v)


def multi_head_attention(x: Tensor, params: dict, prefix: str, n_heads: int) -> Tensor:
    """Self-attention over (B, L, D) using params {prefix}.wq/wk/wv/wo (+bo)."""
    q = split_heads(linear(x, params[f"{prefix}.wq"], params.get(f"{prefix}.bq")), n_heads)
    k = split_heads(linear(x, params[f"{prefix}.wk"], params.get(f"{prefix}.bk")), n_heads)
    v = split_heads(linear(x, params[f"{prefix}.wv"], params.get(f"{prefix}.bv")), n_heads)
    out = merge_heads(attention(q, k, v))
    return linear(out, params[f"{prefix}.wo"], params.get(f"{prefix}.bo"))
