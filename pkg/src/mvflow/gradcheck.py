"""Finite-difference oracle for the reverse-mode engine.

Every trainable module is verified against this check: analytic gradients
from one backward pass vs. central differences computed in float64 on a
deterministic coordinate subsample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class GradientReport:
    max_rel_err: float
    worst_param: str
    per_param: dict = field(default_factory=dict)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def _sample_coords(size: int, n: int) -> np.ndarray:
    """At least ``n`` evenly spaced flat indices (all, when size <= n)."""
    if size <= n:
        return np.arange(size)
    return np.unique(np.linspace(0, size - 1, n).round().astype(np.int64))


def finite_diff_gradcheck(loss_fn, params: dict, epsilon: float = 1e-4,
                          n_coords: int = 32) -> GradientReport:
    """Compare reverse-mode gradients of ``loss_fn(params)`` to central differences.

    ``params`` maps names to Tensors; evaluation is forced to float64 copies
    so the difference quotient is trustworthy at ``epsilon``. Relative error
    per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    params64 = {k: Tensor(v.data.astype(np.float64), requires_grad=True, name=k)
                for k, v in params.items()}

    loss = loss_fn(params64)
    val = float(loss.data)
    if not np.isfinite(val):
        raise FloatingPointError(f"gradcheck loss is not finite: {val}")
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in params64.items()}

    per_param = {}
    with ad.no_grad():
        for name, t in params64.items():
            flat = t.data.reshape(-1)
            coords = _sample_coords(flat.size, n_coords)
            worst = 0.0
            for c in coords:
                orig = flat[c]
                flat[c] = orig + epsilon
                lp = float(loss_fn(params64).data)
                flat[c] = orig - epsilon
                lm = float(loss_fn(params64).data)
                flat[c] = orig
                numeric = (lp - lm) / (2.0 * epsilon)
                a = float(analytic[name].reshape(-1)[c])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, rel)
            per_param[name] = worst

    worst_name = max(per_param, key=per_param.get)
    return GradientReport(per_param[worst_name], worst_name, per_param)
