import numpy as np

from mvflow.autodiff import Tensor
from mvflow.optim import AdamW, clip_grad_norm
from mvflow.rng import RandomStream


def reference_adamw(p, grads, lr, b1, b2, eps, wd):
    """Hand-stepped published recurrence, float64."""
    p = p.astype(np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        g = g.astype(np.float64)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)
    return p


def test_scalar_first_step_matches_reference():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=1e-4, weight_decay=0.0)
    p.grad = np.array([0.5])
    opt.step()
    want = reference_adamw(np.array([1.0]), [np.array([0.5])],
                           1e-4, 0.9, 0.999, 1e-8, 0.0)
    assert np.allclose(p.data, want, rtol=1e-12)
    # first-step direction: mhat/sqrt(vhat) = g/|g| = 1 up to eps
    assert np.isclose(p.data[0], 1.0 - 1e-4 * (0.5 / (0.5 + 1e-8)), rtol=1e-9)


def test_multistep_matches_reference():
    rs = RandomStream(31)
    p0 = rs.normal((4, 3)).astype(np.float64)
    grads = [rs.normal((4, 3)).astype(np.float64) for _ in range(20)]
    p = Tensor(p0.copy(), requires_grad=True)
    opt = AdamW({"p": p}, lr=1e-2, weight_decay=0.01)
    for g in grads:
        p.grad = g.copy()
        opt.step()
    want = reference_adamw(p0, grads, 1e-2, 0.9, 0.999, 1e-8, 0.01)
    assert np.allclose(p.data, want, rtol=1e-10)


def test_zero_grad_zero_decay_is_identity():
    p = Tensor(np.array([2.0, -3.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=1.0, weight_decay=0.0)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [2.0, -3.0])


def test_decay_is_decoupled():
    p = Tensor(np.array([4.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
    p.grad = np.zeros(1)
    opt.step()
    assert np.isclose(p.data[0], 4.0 - 0.1 * 0.5 * 4.0)


def test_missing_grad_treated_as_zero():
    p = Tensor(np.array([1.0]), requires_grad=True)
    q = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW({"p": p, "q": q}, lr=0.1, weight_decay=0.0)
    p.grad = np.array([1.0])
    opt.step()
    assert q.data[0] == 1.0
    assert p.data[0] < 1.0


def test_state_roundtrip_resumes_identically():
    rs = RandomStream(32)
    p0 = rs.normal((5,)).astype(np.float64)
    grads = [rs.normal((5,)).astype(np.float64) for _ in range(8)]

    pa = Tensor(p0.copy(), requires_grad=True)
    oa = AdamW({"p": pa}, lr=1e-2)
    for g in grads:
        pa.grad = g.copy()
        oa.step()

    pb = Tensor(p0.copy(), requires_grad=True)
    ob = AdamW({"p": pb}, lr=1e-2)
    for g in grads[:4]:
        pb.grad = g.copy()
        ob.step()
    snap = {k: v.copy() for k, v in ob.state_tensors().items()}
    pc = Tensor(pb.data.copy(), requires_grad=True)
    oc = AdamW({"p": pc}, lr=1e-2)
    oc.load_state_tensors(snap)
    for g in grads[4:]:
        pc.grad = g.copy()
        oc.step()
    assert np.array_equal(pa.data, pc.data)


def test_zero_grad_clears():
    p = Tensor(np.ones(2), requires_grad=True)
    opt = AdamW({"p": p})
    p.grad = np.ones(2)
    opt.zero_grad()
    assert p.grad is None


def test_clip_grad_norm():
    p = Tensor(np.ones(3), requires_grad=True)
    p.grad = np.array([3.0, 0.0, 4.0])
    norm = clip_grad_norm({"p": p}, 1.0)
    assert np.isclose(norm, 5.0)
    assert np.isclose(np.sqrt((p.grad ** 2).sum()), 1.0)
    norm2 = clip_grad_norm({"p": p}, 10.0)
    assert np.isclose(norm2, 1.0)  # already small, untouched
