"""Rectified-flow training and sampling over multi-view latent grids.

Latents travel on straight lines x_tau = (1-tau) x0 + tau x1; the network
regresses the displacement x1 - x0. Views may freeze at tau=1 (treated as
already-generated conditioning), which masks them out of every loss term
and pins them bitwise during sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dit import ModelConfig, dit_forward
from .moe import moe_fuse
from .rng import RandomStream
from .wavelet import haar3d_forward


@dataclass(frozen=True)
class TimestepPath:
    tau_per_view: np.ndarray     # (K,) float64 in [0, 1]
    frozen_mask: np.ndarray      # (K,) bool, True = held clean at tau=1

    def __post_init__(self):
        tau = np.asarray(self.tau_per_view, np.float64)
        mask = np.asarray(self.frozen_mask, bool)
        object.__setattr__(self, "tau_per_view", tau)
        object.__setattr__(self, "frozen_mask", mask)
        if tau.shape != mask.shape or tau.ndim != 1:
            raise ValueError("tau and mask must be matching (K,) vectors")
        if mask.all():
            raise ValueError("at least one view must be unfrozen")
        if np.any(tau[mask] != 1.0):
            raise ValueError("frozen views must sit exactly at tau=1")
        free = tau[~mask]
        if np.any(free < 0.0) or np.any(free >= 1.0) or np.unique(free).size > 1:
            raise ValueError("unfrozen views share one tau in [0, 1)")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one integration step")


def sample_timestep_path(k: int, stream, p_hetero: float) -> TimestepPath:
    """Joint path with prob 1-p_hetero, else a uniformly drawn frozen subset.

    Draw order is fixed (branch coin, subset, tau) so runs are replayable.
    K=1 has no nonempty proper subset, so p_hetero degenerates to 0.
    """
    if k < 1:
        raise ValueError("need at least one view")
    if not 0.0 <= p_hetero <= 1.0:
        raise ValueError(f"p_hetero out of [0, 1]: {p_hetero}")
    hetero = k > 1 and stream.uniform_scalar() < p_hetero
    mask = np.zeros(k, bool)
    if hetero:
        subset = int(stream.integers(1, 2 ** k - 1))   # 1 .. 2^k-2
        mask = (subset >> np.arange(k)) & 1 == 1
    tau = np.where(mask, 1.0, stream.uniform_scalar())
    return TimestepPath(tau, mask)


def _tau_grid(tau, view_shape):
    t = np.asarray(tau, np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"tau outside [0, 1]: {t}")
    return t.reshape(t.shape + (1,) * len(view_shape)).astype(np.float32)


def interpolate(x0, x1, tau):
    """(1-tau) x0 + tau x1 with tau given per view (or scalar)."""
    a0 = np.asarray(x0, np.float32)
    a1 = np.asarray(x1, np.float32)
    if a0.shape != a1.shape:
        raise ValueError(f"extent mismatch: {a0.shape} vs {a1.shape}")
    t = np.asarray(tau, np.float64)
    tg = _tau_grid(t, a0.shape[t.ndim:])
    return (1.0 - tg) * a0 + tg * a1


def _mask_info(frozen_mask, lead_shape):
    mask = np.asarray(frozen_mask, bool)
    if mask.shape != lead_shape:
        raise ValueError(f"frozen mask shape {mask.shape}, expected {lead_shape}")
    if mask.ndim == 1:
        all_frozen = mask.all()
    else:
        all_frozen = mask.all(axis=-1).any()
    if all_frozen:
        raise ValueError("every view frozen: nothing to train on")
    return mask


def flow_loss(v, x0, x1, frozen_mask) -> Tensor:
    """Mean squared velocity error over the elements of unfrozen views.

    Accepts (K, C, T, H, W) grids with a (K,) mask or batched (N, K, ...)
    grids with an (N, K) mask.
    """
    vt = ad.as_tensor(v)
    a0 = np.asarray(x0, np.float32)
    a1 = np.asarray(x1, np.float32)
    if a0.shape != vt.shape or a1.shape != vt.shape:
        raise ValueError("v, x0, x1 extents differ")
    lead = vt.ndim - 4
    mask = _mask_info(frozen_mask, vt.shape[:lead])
    keep = (~mask).astype(np.float32).reshape(mask.shape + (1,) * 4)
    err = vt - (a1 - a0)
    per_view = int(np.prod(vt.shape[lead:]))
    count = float((~mask).sum() * per_view)
    return ad.tsum(err * err * keep) / count


def wavelet_loss(v, x0, x1, frozen_mask=None) -> Tensor:
    """Squared subband distance between x_hat1 = x0 + v and x1.

    All 8 subbands weigh equally; with the orthonormal transform and even
    extents this equals the latent MSE (Parseval). ``frozen_mask`` restricts
    the mean to unfrozen views, mirroring flow_loss.
    """
    vt = ad.as_tensor(v)
    a0 = np.asarray(x0, np.float32)
    a1 = np.asarray(x1, np.float32)
    if a0.shape != vt.shape or a1.shape != vt.shape:
        raise ValueError("v, x0, x1 extents differ")
    lead = vt.ndim - 4
    if frozen_mask is None:
        mask = np.zeros(vt.shape[:lead], bool)
    else:
        mask = _mask_info(frozen_mask, vt.shape[:lead])
    keep = (~mask).astype(np.float32).reshape(mask.shape + (1,) * 4)

    x_hat = vt + a0
    bands_hat, _ = haar3d_forward(x_hat)
    bands_ref, _ = haar3d_forward(ad.as_tensor(a1))
    total = None
    coeffs_per_view = 0
    for bh, br in zip(bands_hat, bands_ref):
        diff = bh - br
        term = ad.tsum(diff * diff * keep)
        total = term if total is None else total + term
        coeffs_per_view += int(np.prod(bh.shape[lead:]))
    count = float((~mask).sum() * coeffs_per_view)
    return total / count


@dataclass
class TrainBatch:
    """One optimizer step's worth of clips; leading axes (N, K)."""
    x1: np.ndarray                    # (N, K, C, T, H, W) clean latents
    x0: np.ndarray                    # matching fresh noise
    f_s: np.ndarray                   # sketch features, same extents
    f_d: np.ndarray                   # depth features, same extents
    styles: np.ndarray                # (N, K) ints
    paths: list                       # N TimestepPath entries
    points: np.ndarray | None = None  # (N, K, T, H, W, 3) normalized
    rays: np.ndarray | None = None    # (N, K, T, H, W, 6)
    present_s: np.ndarray | None = None   # (N,) modality-dropout flags
    present_d: np.ndarray | None = None

    def __post_init__(self):
        n, k = self.x1.shape[:2]
        if self.x0.shape != self.x1.shape:
            raise ValueError("x0/x1 extents differ")
        if len(self.paths) != n:
            raise ValueError(f"need {n} timestep paths, got {len(self.paths)}")
        if self.present_s is None:
            self.present_s = np.ones(n, np.float32)
        if self.present_d is None:
            self.present_d = np.ones(n, np.float32)

    @property
    def tau(self) -> np.ndarray:
        return np.stack([p.tau_per_view for p in self.paths])

    @property
    def frozen(self) -> np.ndarray:
        return np.stack([p.frozen_mask for p in self.paths])


def fuse_controls(x_tau, batch: TrainBatch, params: dict, tau=None):
    """moe_fuse over the flattened (N*K) view axis with per-view tau."""
    n, k = batch.x1.shape[:2]
    grid = batch.x1.shape[2:]
    flat = (n * k,) + grid
    x_flat = ad.reshape(ad.as_tensor(x_tau), flat)
    tau_flat = (batch.tau if tau is None else np.asarray(tau)).reshape(n * k)
    c = moe_fuse(x_flat,
                 batch.f_s.reshape(flat), batch.f_d.reshape(flat), tau_flat,
                 np.repeat(batch.present_s, k), np.repeat(batch.present_d, k),
                 params)
    return ad.reshape(c, (n, k) + grid)


def _first_nonfinite(compute):
    """Re-run ``compute`` in checked mode to name the first bad tensor."""
    prev = ad.checked_mode()
    ad.set_checked(True)
    try:
        compute()
    except ad.NonFiniteError as exc:
        return str(exc)
    finally:
        ad.set_checked(prev)
    return "loss"


def train_step(batch: TrainBatch, params: dict, opt, config: ModelConfig,
               lambda_wav: float = 0.1) -> dict:
    """One AdamW update; returns the loss report. Frozen views enter the
    network as clean latents at tau=1 and are masked out of both losses."""
    tau = batch.tau
    frozen = batch.frozen
    x_tau = interpolate(batch.x0, batch.x1, tau)

    def compute():
        c_tau = fuse_controls(x_tau, batch, params)
        v = dit_forward(x_tau, c_tau, batch.points, batch.rays, tau,
                        batch.styles, params, config)
        fl = flow_loss(v, batch.x0, batch.x1, frozen)
        wl = wavelet_loss(v, batch.x0, batch.x1, frozen)
        return fl, wl, fl + lambda_wav * wl

    fl, wl, total = compute()
    if not np.isfinite(total.data):
        culprit = _first_nonfinite(compute)
        raise FloatingPointError(f"non-finite training loss; first bad tensor: {culprit}")
    opt.zero_grad()
    total.backward()
    opt.step()
    return {"flow_loss": float(fl.data), "wavelet_loss": float(wl.data),
            "total": float(total.data)}


def default_velocity_fn(f_s, f_d, present_s, present_d, points, rays, styles,
                        params: dict, config: ModelConfig):
    """Wrap the fusion block and DiT as a sampler velocity field."""
    k = config.views

    def velocity(x: np.ndarray, tau_vec: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            c = moe_fuse(x, f_s, f_d, tau_vec,
                         np.repeat(np.float32(present_s), k),
                         np.repeat(np.float32(present_d), k), params)
            v = dit_forward(ad.as_tensor(x), c, points, rays, tau_vec,
                            np.asarray(styles), params, config)
        return v.data

    return velocity


def euler_sample(velocity_fn, latent_shape, frozen_latents, frozen_mask,
                 sampler: SamplerConfig, stream=None) -> np.ndarray:
    """Integrate dx/dtau = v from seeded noise with tau_i = i/N.

    ``frozen_latents`` is a (K, C, T, H, W) array whose rows are consumed
    only where ``frozen_mask`` is set; those rows stay bitwise constant and
    the network sees tau=1 for them throughout.
    """
    mask = np.asarray(frozen_mask, bool)
    k = mask.shape[0]
    if mask.all():
        raise ValueError("every view frozen: nothing to sample")
    if stream is None:
        stream = RandomStream(sampler.seed, 0)
    x = stream.normal((k,) + tuple(latent_shape)).astype(np.float64)
    if mask.any():
        x[mask] = np.asarray(frozen_latents, np.float32)[mask]
    n = sampler.steps
    for i in range(n):
        tau_vec = np.where(mask, 1.0, i / n)
        v = np.asarray(velocity_fn(x.astype(np.float32), tau_vec), np.float64)
        x[~mask] += v[~mask] / n
    out = x.astype(np.float32)
    if mask.any():
        out[mask] = np.asarray(frozen_latents, np.float32)[mask]
    return out


def autoregressive_extend(given: dict, target_view: int, velocity_fn,
                          latent_shape, config: ModelConfig,
                          sampler: SamplerConfig) -> np.ndarray:
    """Regenerate one view with the given views frozen as conditioning."""
    k = config.views
    if not 1 <= len(given) <= k - 1:
        raise ValueError(f"given views must number 1..{k - 1}, got {len(given)}")
    if target_view in given or not 0 <= target_view < k:
        raise ValueError(f"target view {target_view} must be a free slot")
    frozen = np.zeros((k,) + tuple(latent_shape), np.float32)
    mask = np.zeros(k, bool)
    for idx, latent in given.items():
        frozen[idx] = latent
        mask[idx] = True
    out = euler_sample(velocity_fn, latent_shape, frozen, mask, sampler)
    for idx, latent in given.items():
        if not np.array_equal(out[idx], np.asarray(latent, np.float32)):
            raise AssertionError("frozen view mutated during sampling")
    return out[target_view]
