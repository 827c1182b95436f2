import numpy as np
import pytest

from mvflow import autodiff as ad
from mvflow.autodiff import NonFiniteError, Tensor
from mvflow.rng import RandomStream


def numeric_grad(fn, arrs, eps=1e-5):
    """Central differences of scalar fn(list of float64 arrays) per array."""
    arrs = [a.astype(np.float64) for a in arrs]
    grads = []
    for a in arrs:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = fn(arrs)
            flat[i] = orig - eps
            lm = fn(arrs)
            flat[i] = orig
            gf[i] = (lp - lm) / (2 * eps)
        grads.append(g)
    return grads


def analytic_grad(op, arrs):
    ts = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrs]
    op(ts).backward()
    return [t.grad for t in ts]


def check_op(op, arrs, tol=1e-6):
    ana = analytic_grad(op, arrs)
    num = numeric_grad(lambda xs: float(op([Tensor(x) for x in xs]).data), arrs)
    for a, n in zip(ana, num):
        assert np.allclose(a, n, rtol=tol, atol=tol), (a, n)


def test_quadratic_gradient():
    p = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    ad.tsum(ad.mul(p, p)).backward()
    assert np.allclose(p.grad, [2.0, 4.0, 6.0], rtol=1e-12)


def test_add_broadcast_grad():
    rs = RandomStream(1)
    a = rs.normal((3, 4)).astype(np.float64)
    b = rs.normal((4,)).astype(np.float64)
    check_op(lambda ts: ad.tsum(ad.mul(ad.add(ts[0], ts[1]), ad.add(ts[0], ts[1]))), [a, b])


def test_mul_div_scalar_keeps_dtype():
    x = Tensor(np.ones((2, 2), np.float32), requires_grad=True)
    assert ad.mul(x, 2.0).dtype == np.float32
    assert ad.div(x, 2.0).dtype == np.float32
    assert (x / 2.0).dtype == np.float32
    assert (x - 1.0).dtype == np.float32


def test_matmul_batched_grad():
    rs = RandomStream(2)
    a = rs.normal((2, 3, 4)).astype(np.float64)
    b = rs.normal((4, 5)).astype(np.float64)
    check_op(lambda ts: ad.tsum(ad.matmul(ts[0], ts[1])), [a, b])


def test_matmul_broadcast_batch_dims():
    rs = RandomStream(3)
    a = rs.normal((2, 2, 3, 4)).astype(np.float64)
    b = rs.normal((2, 1, 4, 3)).astype(np.float64)
    check_op(lambda ts: ad.tsum(ad.mul(ad.matmul(ts[0], ts[1]), 0.5)), [a, b])


@pytest.mark.parametrize("op", [ad.exp, ad.log, ad.sqrt, ad.sigmoid, ad.silu,
                                ad.tanh, ad.gelu])
def test_unary_grads(op):
    rs = RandomStream(4)
    a = np.abs(rs.normal((3, 3)).astype(np.float64)) + 0.5
    check_op(lambda ts: ad.tsum(op(ts[0])), [a], tol=1e-5)


def test_softmax_rows_sum_to_one():
    rs = RandomStream(5)
    y = ad.softmax(Tensor(rs.normal((4, 7))), axis=-1)
    assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_grad():
    rs = RandomStream(6)
    a = rs.normal((2, 5)).astype(np.float64)
    w = rs.normal((2, 5)).astype(np.float64)
    check_op(lambda ts: ad.tsum(ad.mul(ad.softmax(ts[0], axis=-1), w)), [a], tol=1e-5)


def test_mean_axis_and_keep_shape_grads():
    rs = RandomStream(7)
    a = rs.normal((2, 3, 4)).astype(np.float64)
    check_op(lambda ts: ad.tsum(ad.mul(ad.tmean(ts[0], axis=(0, 2)), 3.0)), [a])
    check_op(lambda ts: ad.tmean(ts[0]), [a])


def test_reshape_transpose_grads():
    rs = RandomStream(8)
    a = rs.normal((2, 3, 4)).astype(np.float64)
    check_op(lambda ts: ad.tsum(ad.mul(ad.transpose(ad.reshape(ts[0], (6, 4)), (1, 0)),
                                       ad.transpose(ad.reshape(ts[0], (6, 4)), (1, 0)))), [a])


def test_concat_stack_grads():
    rs = RandomStream(9)
    a = rs.normal((2, 3)).astype(np.float64)
    b = rs.normal((2, 3)).astype(np.float64)
    check_op(lambda ts: ad.tsum(ad.mul(ad.concatenate(ts, axis=1),
                                       ad.concatenate(ts, axis=1))), [a, b])
    check_op(lambda ts: ad.tsum(ad.mul(ad.stack(ts, axis=0), 2.0)), [a, b])


def test_take_scatter_adds_repeated_rows():
    table = Tensor(np.eye(3), requires_grad=True)
    rows = ad.take(table, np.array([1, 1, 2]))
    ad.tsum(rows).backward()
    want = np.array([[0.0] * 3, [2.0] * 3, [1.0] * 3])
    assert np.array_equal(table.grad, want)


def test_slice_grad():
    rs = RandomStream(10)
    a = rs.normal((4, 5)).astype(np.float64)
    check_op(lambda ts: ad.tsum(ad.mul(ad.take(ts[0], (slice(1, 3), slice(None))), 2.0)), [a])


def test_power_grad():
    rs = RandomStream(11)
    a = np.abs(rs.normal((3,)).astype(np.float64)) + 0.5
    check_op(lambda ts: ad.tsum(ts[0] ** 3), [a], tol=1e-5)


def test_checked_mode_traps_nonfinite():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0, np.inf]))
    with ad.unchecked():
        t = Tensor(np.array([np.nan]))
        assert np.isnan(t.data[0])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, 2.0)
    assert y._parents == ()
    assert not y.requires_grad


def test_detach_blocks_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.mul(x.detach(), 5.0)
    z = ad.tsum(ad.add(ad.mul(x, 2.0), y))
    z.backward()
    assert np.allclose(x.grad, 2.0)


def test_grad_accumulates_across_uses():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = ad.add(ad.mul(x, x), ad.mul(x, 2.0))
    y.backward()
    assert np.allclose(x.grad, [8.0])


def test_intermediate_grads_freed_leaves_kept():
    x = Tensor(np.ones(2), requires_grad=True)
    mid = ad.mul(x, 3.0)
    ad.tsum(mid).backward()
    assert mid.grad is None
    assert x.grad is not None


def test_diamond_graph_grad():
    x = Tensor(np.array([2.0]), requires_grad=True)
    a = ad.mul(x, x)
    b = ad.add(a, x)
    c = ad.mul(a, b)
    c.backward()
    # d/dx [x^2 (x^2 + x)] = 4x^3 + 3x^2
    assert np.allclose(x.grad, [4 * 8 + 3 * 4])
