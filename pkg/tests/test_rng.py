import numpy as np
import pytest

from mvflow.rng import RandomStream


def test_same_seed_stream_identical():
    a = RandomStream(7).normal((100,))
    b = RandomStream(7).normal((100,))
    assert np.array_equal(a, b)


def test_distinct_streams_differ_and_decorrelate():
    n = 10_000
    a = RandomStream(7, 0).normal((n,)).astype(np.float64)
    b = RandomStream(7, 1).normal((n,)).astype(np.float64)
    assert not np.array_equal(a, b)
    r = np.corrcoef(a, b)[0, 1]
    assert -0.05 < r < 0.05


def test_normal_moments():
    x = RandomStream(123).normal((100_000,)).astype(np.float64)
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.03


def test_uniform_range_and_chi_square():
    x = RandomStream(456).uniform((100_000,)).astype(np.float64)
    assert x.min() >= 0.0 and x.max() < 1.0
    counts, _ = np.histogram(x, bins=10, range=(0.0, 1.0))
    expected = x.size / 10
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 27.88  # 99.9% critical value, 9 dof


def test_zero_or_negative_extent_rejected():
    rs = RandomStream(0)
    with pytest.raises(ValueError):
        rs.normal((0,))
    with pytest.raises(ValueError):
        rs.uniform((3, 0, 2))
    with pytest.raises(ValueError):
        rs.normal((-1,))


def test_child_streams_deterministic():
    a = RandomStream(9).child(5).normal((10,))
    b = RandomStream(9, 5).normal((10,))
    assert np.array_equal(a, b)


def test_integers_and_permutation():
    rs = RandomStream(11)
    v = rs.integers(0, 10, (1000,))
    assert v.min() >= 0 and v.max() < 10
    with pytest.raises(ValueError):
        rs.integers(5, 5)
    p1 = RandomStream(12).permutation(20)
    p2 = RandomStream(12).permutation(20)
    assert np.array_equal(p1, p2)
    assert sorted(p1.tolist()) == list(range(20))


def test_uniform_scalar_deterministic():
    assert RandomStream(3).uniform_scalar() == RandomStream(3).uniform_scalar()


def test_dtype_default_float32():
    assert RandomStream(1).normal((4,)).dtype == np.float32
    assert RandomStream(1).uniform((4,)).dtype == np.float32
