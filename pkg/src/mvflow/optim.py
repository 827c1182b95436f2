"""AdamW with decoupled weight decay.

Follows the published recurrence: biased first/second moments with bias
correction, decay applied directly to the parameter (not through the
gradient). State is exposed as named arrays so checkpoints can carry it.
"""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, params: dict, lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        """Apply one update from the .grad fields; missing grads count as zero."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            mhat = m / c1
            vhat = v / c2
            upd = mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay:
                upd = upd + self.weight_decay * p.data
            p.data -= (self.lr * upd).astype(p.data.dtype, copy=False)

    def state_tensors(self) -> dict:
        """Flat name->array view of the state for checkpointing."""
        out = {"opt.t": np.array([self.t], dtype=np.float64)}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    def load_state_tensors(self, tensors: dict):
        self.t = int(tensors["opt.t"][0])
        for k in self.params:
            self.m[k] = tensors[f"opt.m.{k}"].astype(self.m[k].dtype, copy=True)
            self.v[k] = tensors[f"opt.v.{k}"].astype(self.v[k].dtype, copy=True)


def clip_grad_norm(params: dict, max_norm: float) -> float:
    """Global L2 clip; returns the pre-clip norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.square(p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm
