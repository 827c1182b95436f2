"""3D convolution / transposed convolution with reverse-mode gradients.

Both directions share two numpy kernels: an im2col + GEMM forward and a
tap-wise strided scatter that implements the adjoint without ``np.add.at``.
The scatter loops over the k³ kernel taps only; each tap lands on a disjoint
strided view, so the adds stay vectorized.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, _accumulate, make_op


def _triple(v):
    return (v, v, v) if isinstance(v, int) else tuple(v)


def _pad5(x, pads):
    pt, ph, pw = pads
    if pt == ph == pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _gemm_conv(xp, w_mat, ksize, stride, out_dims):
    """Correlate padded ``xp`` (N,C,*sp) with ``w_mat`` (O, C*k³) -> (N,O,*out)."""
    n = xp.shape[0]
    st, sh, sw = stride
    ot, oh, ow = out_dims
    win = sliding_window_view(xp, ksize, axis=(2, 3, 4))
    win = win[:, :, ::st, ::sh, ::sw][:, :, :ot, :oh, :ow]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    cols = cols.reshape(n, ot * oh * ow, -1)
    out = cols @ w_mat.T
    return out.transpose(0, 2, 1).reshape(n, w_mat.shape[0], ot, oh, ow), cols


def _scatter_conv(y, w, stride, padded_dims):
    """Adjoint of :func:`_gemm_conv`: spread (N,O,*sp) through w (O,C,k³).

    One small GEMM per kernel tap. Taps are grouped by their output residue
    modulo the stride (polyphase decomposition): each group accumulates in a
    buffer at tap resolution and lands on the big strided output in a single
    write, so large-array traffic stays near one pass regardless of k³. This
    also avoids ever materializing the (N, L, C·k³) column matrix.
    """
    n, o, t, h, wd = y.shape
    c = w.shape[1]
    kt, kh, kw = w.shape[2:]
    st, sh, sw = stride
    yflat = np.ascontiguousarray(y.transpose(0, 2, 3, 4, 1)).reshape(-1, o)
    # tap-major contiguous kernel: strided (O, C) slices would defeat BLAS
    wt = np.ascontiguousarray(w.transpose(2, 3, 4, 0, 1))
    out = np.zeros((n,) + tuple(padded_dims) + (c,), dtype=y.dtype)
    for rt in range(min(st, kt)):
        for rh in range(min(sh, kh)):
            for rw in range(min(sw, kw)):
                mt = (kt - 1 - rt) // st
                mh = (kh - 1 - rh) // sh
                mw = (kw - 1 - rw) // sw
                buf = np.zeros((n, t + mt, h + mh, wd + mw, c), y.dtype)
                for dt in range(mt + 1):
                    for dh in range(mh + 1):
                        for dw in range(mw + 1):
                            tap = yflat @ wt[rt + st * dt, rh + sh * dh, rw + sw * dw]
                            buf[:, dt:dt + t, dh:dh + h, dw:dw + wd] += \
                                tap.reshape(n, t, h, wd, c)
                out[:,
                    rt:rt + st * (t + mt):st,
                    rh:rh + sh * (h + mh):sh,
                    rw:rw + sw * (wd + mw):sw] += buf
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))


def _conv_out_dim(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """Cross-correlation of (C,T,H,W) or (N,C,T,H,W) input with (O,C,kt,kh,kw)."""
    stride, padding = _triple(stride), _triple(padding)
    squeeze = x.ndim == 4
    xd = x.data[None] if squeeze else x.data
    ksize = w.shape[2:]
    in_dims = xd.shape[2:]
    out_dims = tuple(_conv_out_dim(n, k, s, p)
                     for n, k, s, p in zip(in_dims, ksize, stride, padding))
    if any(d <= 0 for d in out_dims):
        raise ValueError(f"conv3d: kernel {ksize} does not fit input {in_dims}")
    xp = _pad5(xd, padding)
    padded_dims = xp.shape[2:]
    out, cols = _gemm_conv(xp, w.data.reshape(w.shape[0], -1), ksize, stride, out_dims)
    del xp
    if b is not None:
        out = out + b.data[:, None, None, None]
    if squeeze:
        out = out[0]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gm = g[None] if squeeze else g
        if x.requires_grad or x._parents:
            gxp = _scatter_conv(gm, w.data, stride, padded_dims)
            pt, ph, pw = padding
            gx = gxp[:, :, pt:pt + in_dims[0], ph:ph + in_dims[1], pw:pw + in_dims[2]]
            _accumulate(x, gx[0] if squeeze else gx)
        if w.requires_grad or w._parents:
            gflat = gm.reshape(gm.shape[0], gm.shape[1], -1)
            gw = np.tensordot(gflat, cols, axes=([0, 2], [0, 1]))
            _accumulate(w, gw.reshape(w.shape))
        if b is not None and (b.requires_grad or b._parents):
            _accumulate(b, gm.sum(axis=(0, 2, 3, 4)))

    return make_op(out, parents, backward)


def conv_transpose3d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride=1, padding=0, output_padding=0) -> Tensor:
    """Transposed conv; ``w`` has layout (C_in, C_out, kt, kh, kw)."""
    stride, padding = _triple(stride), _triple(padding)
    output_padding = _triple(output_padding)
    squeeze = x.ndim == 4
    xd = x.data[None] if squeeze else x.data
    ksize = w.shape[2:]
    in_dims = xd.shape[2:]
    out_dims = tuple((n - 1) * s - 2 * p + k + op
                     for n, k, s, p, op in zip(in_dims, ksize, stride, padding, output_padding))
    if any(d <= 0 for d in out_dims):
        raise ValueError(f"conv_transpose3d: empty output for input {in_dims}")
    padded_dims = tuple(o + 2 * p for o, p in zip(out_dims, padding))
    full = _scatter_conv(xd, w.data, stride, padded_dims)
    pt, ph, pw = padding
    out = full[:, :, pt:pt + out_dims[0], ph:ph + out_dims[1], pw:pw + out_dims[2]]
    if b is not None:
        out = out + b.data[:, None, None, None]
    if squeeze:
        out = out[0]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gm = g[None] if squeeze else g
        gp = _pad5(gm, padding)
        w_mat = w.data.reshape(w.shape[0], -1)
        gx, cols = _gemm_conv(gp, w_mat, ksize, stride, in_dims)
        if x.requires_grad or x._parents:
            _accumulate(x, gx[0] if squeeze else gx)
        if w.requires_grad or w._parents:
            xflat = xd.reshape(xd.shape[0], xd.shape[1], -1)
            gw = np.tensordot(xflat, cols, axes=([0, 2], [0, 1]))
            _accumulate(w, gw.reshape(w.shape))
        if b is not None and (b.requires_grad or b._parents):
            _accumulate(b, gm.sum(axis=(0, 2, 3, 4)))

    return make_op(np.ascontiguousarray(out), parents, backward)
