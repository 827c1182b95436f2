"""Single-level orthonormal 3D Haar transform, differentiable.

Pairs (a, b) map to ((a+b)/sqrt2, (a-b)/sqrt2) along the last three axes in
T, H, W order, producing 8 subbands (LLL, LLH, LHL, ... HHH with letters in
axis order T/H/W). Orthonormality gives Parseval energy equality, which the
wavelet loss relies on. Odd extents are edge-replicated to even first; the
original extents are returned so the inverse can crop.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_INV_SQRT2 = 1.0 / np.sqrt(2.0)

SUBBAND_NAMES = ("lll", "llh", "lhl", "lhh", "hll", "hlh", "hhl", "hhh")


def _axis_slice(ndim, axis, sl):
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def _pad_even(x: Tensor, axis: int) -> Tensor:
    if x.shape[axis] % 2 == 0:
        return x
    last = ad.take(x, _axis_slice(x.ndim, axis, slice(-1, None)))
    return ad.concatenate([x, last], axis=axis)


def _split(x: Tensor, axis: int):
    even = ad.take(x, _axis_slice(x.ndim, axis, slice(0, None, 2)))
    odd = ad.take(x, _axis_slice(x.ndim, axis, slice(1, None, 2)))
    lo = ad.mul(ad.add(even, odd), _INV_SQRT2)
    hi = ad.mul(ad.add(even, ad.neg(odd)), _INV_SQRT2)
    return lo, hi


def _merge(lo: Tensor, hi: Tensor, axis: int) -> Tensor:
    even = ad.mul(ad.add(lo, hi), _INV_SQRT2)
    odd = ad.mul(ad.add(lo, ad.neg(hi)), _INV_SQRT2)
    axis = axis % lo.ndim
    stacked = ad.stack([even, odd], axis=axis + 1)
    shape = list(lo.shape)
    shape[axis] *= 2
    return ad.reshape(stacked, tuple(shape))


def haar3d_forward(x):
    """-> (8 subband Tensors in SUBBAND_NAMES order, original (T, H, W))."""
    x = ad.as_tensor(x)
    if x.ndim < 3:
        raise ValueError("need at least (T, H, W) axes")
    extents = x.shape[-3:]
    bands = [x]
    for axis in (-3, -2, -1):
        nxt = []
        for band in bands:
            lo, hi = _split(_pad_even(band, axis % x.ndim), axis)
            nxt.extend([lo, hi])
        bands = nxt
    return tuple(bands), extents


def haar3d_inverse(bands, extents) -> Tensor:
    """Exact inverse of haar3d_forward, cropped to ``extents``."""
    bands = [ad.as_tensor(b) for b in bands]
    if len(bands) != 8:
        raise ValueError("expected 8 subbands")
    for axis in (-1, -2, -3):
        bands = [_merge(bands[i], bands[i + 1], axis)
                 for i in range(0, len(bands), 2)]
    out = bands[0]
    for axis, want in zip((-3, -2, -1), extents):
        if out.shape[axis] != want:
            out = ad.take(out, _axis_slice(out.ndim, axis % out.ndim, slice(0, want)))
    return out