import numpy as np
import pytest

from mvflow import autodiff as ad
from mvflow.dit import ModelConfig, init_model_params
from mvflow.flow import (SamplerConfig, TimestepPath, TrainBatch,
                         autoregressive_extend, euler_sample, flow_loss,
                         interpolate, sample_timestep_path, train_step,
                         wavelet_loss)
from mvflow.moe import init_moe
from mvflow.optim import AdamW
from mvflow.rng import RandomStream

CFG = ModelConfig(d=8, blocks=1, heads=2, mlp_ratio=2, views=2, styles=2,
                  c_lat=2, t_lat=2, h_lat=2, w_lat=2)
SHAPE = CFG.latent_shape()


def toy_batch(seed, n=2, frozen=None):
    rs = RandomStream(seed, 0)
    k = CFG.views
    g = (n, k) + SHAPE
    paths = []
    for i in range(n):
        if frozen is None:
            paths.append(TimestepPath(np.full(k, 0.3 + 0.2 * i), np.zeros(k, bool)))
        else:
            tau = np.where(frozen, 1.0, 0.4)
            paths.append(TimestepPath(tau, np.asarray(frozen)))
    return TrainBatch(
        x1=rs.child(1).normal(g), x0=rs.child(2).normal(g),
        f_s=rs.child(3).normal(g), f_d=rs.child(4).normal(g),
        styles=np.asarray(rs.child(5).integers(0, CFG.styles, (n, k))),
        paths=paths,
        points=rs.child(6).normal((n, k, CFG.t_lat, CFG.h_lat, CFG.w_lat, 3)),
        rays=rs.child(7).normal((n, k, CFG.t_lat, CFG.h_lat, CFG.w_lat, 6)))


def model_params(seed):
    params = init_model_params(RandomStream(seed, 0).child(0), CFG)
    params.update(init_moe(RandomStream(seed, 1).child(0), CFG.c_lat))
    return params


class TestInterpolate:
    def test_endpoints(self):
        rs = RandomStream(1, 0)
        x0, x1 = rs.child(0).normal((2, 3)), rs.child(1).normal((2, 3))
        assert np.array_equal(interpolate(x0, x1, 0.0), x0)
        assert np.array_equal(interpolate(x0, x1, 1.0), x1)

    def test_quarter_point(self):
        assert interpolate(np.array([2.0]), np.array([6.0]), 0.25) == pytest.approx([3.0])

    def test_affine_in_tau(self):
        rs = RandomStream(2, 0)
        x0, x1 = rs.child(0).normal((4,)), rs.child(1).normal((4,))
        mid = 0.5 * (interpolate(x0, x1, 0.0) + interpolate(x0, x1, 1.0))
        assert np.allclose(mid, interpolate(x0, x1, 0.5), atol=1e-7)

    def test_per_view_tau(self):
        x0 = np.zeros((2, 1, 2, 2, 2), np.float32)
        x1 = np.ones_like(x0)
        out = interpolate(x0, x1, np.array([0.25, 1.0]))
        assert np.all(out[0] == 0.25) and np.all(out[1] == 1.0)

    def test_extent_mismatch(self):
        with pytest.raises(ValueError):
            interpolate(np.zeros(3), np.zeros(4), 0.5)

    def test_tau_out_of_range(self):
        with pytest.raises(ValueError):
            interpolate(np.zeros(3), np.zeros(3), 1.5)


class TestFlowLoss:
    def test_perfect_velocity_is_zero(self):
        rs = RandomStream(3, 0)
        x0 = rs.child(0).normal((2,) + SHAPE)
        x1 = rs.child(1).normal((2,) + SHAPE)
        loss = flow_loss(ad.as_tensor(x1 - x0), x0, x1, np.zeros(2, bool))
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)

    def test_unit_error(self):
        x0 = np.zeros((2,) + SHAPE, np.float32)
        x1 = np.ones_like(x0)
        loss = flow_loss(ad.as_tensor(np.zeros_like(x0)), x0, x1, np.zeros(2, bool))
        assert float(loss.data) == pytest.approx(1.0)

    def test_frozen_view_fully_masked(self):
        rs = RandomStream(4, 0)
        x0 = rs.child(0).normal((2,) + SHAPE)
        x1 = rs.child(1).normal((2,) + SHAPE)
        v = ad.as_tensor(rs.child(2).normal((2,) + SHAPE))
        mask = np.array([False, True])
        base = float(flow_loss(v, x0, x1, mask).data)
        x1_pert = x1.copy()
        x1_pert[1] += 17.0
        x0_pert = x0.copy()
        x0_pert[1] -= 4.0
        pert = float(flow_loss(v, x0_pert, x1_pert, mask).data)
        assert base == pert   # bit-identical

    def test_mean_over_unfrozen_only(self):
        x0 = np.zeros((2,) + SHAPE, np.float32)
        x1 = np.ones_like(x0)
        v = np.zeros_like(x0)
        full = float(flow_loss(ad.as_tensor(v), x0, x1, np.zeros(2, bool)).data)
        half = float(flow_loss(ad.as_tensor(v), x0, x1, np.array([False, True])).data)
        assert full == pytest.approx(1.0) and half == pytest.approx(1.0)

    def test_all_frozen_rejected(self):
        x = np.zeros((2,) + SHAPE, np.float32)
        with pytest.raises(ValueError):
            flow_loss(ad.as_tensor(x), x, x, np.ones(2, bool))

    def test_batched_mask(self):
        rs = RandomStream(5, 0)
        x0 = rs.child(0).normal((2, 2) + SHAPE)
        x1 = rs.child(1).normal((2, 2) + SHAPE)
        v = ad.as_tensor(rs.child(2).normal((2, 2) + SHAPE))
        mask = np.array([[False, True], [False, False]])
        loss = float(flow_loss(v, x0, x1, mask).data)
        manual = [((v.data[i, j] - (x1[i, j] - x0[i, j])) ** 2)
                  for i, j in ((0, 0), (1, 0), (1, 1))]
        assert loss == pytest.approx(np.mean([m.mean() for m in manual]), rel=1e-6)


class TestWaveletLoss:
    def test_exact_prediction_is_zero(self):
        rs = RandomStream(6, 0)
        x0 = rs.child(0).normal((1,) + SHAPE)
        x1 = rs.child(1).normal((1,) + SHAPE)
        loss = wavelet_loss(ad.as_tensor(x1 - x0), x0, x1)
        assert float(loss.data) == pytest.approx(0.0, abs=1e-10)

    def test_parseval_equals_latent_mse(self):
        rs = RandomStream(7, 0)
        for trial in range(100):
            s = rs.child(trial)
            x0 = s.normal((1,) + SHAPE)
            x1 = s.normal((1,) + SHAPE)
            v = s.normal((1,) + SHAPE)
            wl = float(wavelet_loss(ad.as_tensor(v), x0, x1).data)
            mse = float(np.mean(((x0 + v) - x1).astype(np.float64) ** 2))
            assert abs(wl - mse) / max(mse, 1e-12) < 1e-5

    def test_quadratic_homogeneity(self):
        rs = RandomStream(8, 0)
        x0 = rs.child(0).normal((1,) + SHAPE)
        x1 = x0.copy()
        err = rs.child(1).normal((1,) + SHAPE)
        small = float(wavelet_loss(ad.as_tensor(err), x0, x1).data)
        big = float(wavelet_loss(ad.as_tensor(2.0 * err), x0, x1).data)
        assert abs(big - 4.0 * small) / big < 1e-6

    def test_frozen_masking_matches_flow_loss_contract(self):
        rs = RandomStream(9, 0)
        x0 = rs.child(0).normal((2,) + SHAPE)
        x1 = rs.child(1).normal((2,) + SHAPE)
        v = ad.as_tensor(rs.child(2).normal((2,) + SHAPE))
        mask = np.array([False, True])
        base = float(wavelet_loss(v, x0, x1, mask).data)
        x1p = x1.copy()
        x1p[1] *= -3.0
        assert float(wavelet_loss(v, x0, x1p, mask).data) == base


class TestTimestepPath:
    def test_joint_when_p_zero(self):
        for i in range(20):
            path = sample_timestep_path(3, RandomStream(10, i), 0.0)
            assert not path.frozen_mask.any()
            assert np.unique(path.tau_per_view).size == 1
            assert 0.0 <= path.tau_per_view[0] < 1.0

    def test_hetero_when_p_one(self):
        sizes = set()
        for i in range(50):
            path = sample_timestep_path(3, RandomStream(11, i), 1.0)
            n_frozen = int(path.frozen_mask.sum())
            sizes.add(n_frozen)
            assert 1 <= n_frozen <= 2
            assert np.all(path.tau_per_view[path.frozen_mask] == 1.0)
            free = path.tau_per_view[~path.frozen_mask]
            assert np.unique(free).size == 1 and free[0] < 1.0
        assert sizes == {1, 2}

    def test_k1_degenerates(self):
        path = sample_timestep_path(1, RandomStream(12, 0), 1.0)
        assert not path.frozen_mask.any()

    def test_subset_uniformity_small_sample(self):
        counts = {}
        for i in range(3000):
            path = sample_timestep_path(3, RandomStream(13, i), 1.0)
            key = tuple(path.frozen_mask.tolist())
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 6
        freqs = np.array(list(counts.values())) / 3000.0
        assert np.abs(freqs - 1 / 6).max() < 0.03

    def test_invalid_construction_rejected(self):
        with pytest.raises(ValueError):
            TimestepPath(np.array([0.5, 0.5]), np.array([True, True]))
        with pytest.raises(ValueError):
            TimestepPath(np.array([0.9, 0.5]), np.array([True, False]))
        with pytest.raises(ValueError):
            TimestepPath(np.array([1.0, 0.5, 0.6]), np.array([True, False, False]))
        with pytest.raises(ValueError):
            sample_timestep_path(2, RandomStream(14, 0), 1.5)


class TestTrainStep:
    def test_loss_decreases_on_fixed_batch(self):
        params = model_params(15)
        batch = toy_batch(16)
        opt = AdamW(params, lr=3e-3)
        first = train_step(batch, params, opt, CFG)
        last = first
        for _ in range(49):
            last = train_step(batch, params, opt, CFG)
        assert last["total"] < first["total"]

    def test_report_separates_terms(self):
        params = model_params(17)
        batch = toy_batch(18)
        report = train_step(batch, params, opt=AdamW(params), config=CFG)
        assert set(report) == {"flow_loss", "wavelet_loss", "total"}
        assert report["total"] == pytest.approx(
            report["flow_loss"] + 0.1 * report["wavelet_loss"], rel=1e-6)

    def test_nonfinite_loss_aborts_with_diagnostic(self):
        params = model_params(19)
        batch = toy_batch(20)
        batch.x1[0, 0, 0, 0, 0, 0] = np.inf
        with pytest.raises(FloatingPointError, match="non-finite"):
            train_step(batch, params, AdamW(params), CFG)

    def test_frozen_views_masked_in_training_losses(self):
        params = model_params(21)
        frozen = np.array([False, True])
        batch = toy_batch(22, n=1, frozen=frozen)
        x_tau = interpolate(batch.x0, batch.x1, batch.tau)
        from mvflow.flow import fuse_controls
        from mvflow.dit import dit_forward
        with ad.no_grad():
            c = fuse_controls(x_tau, batch, params)
            v = dit_forward(x_tau, c, batch.points, batch.rays, batch.tau,
                            batch.styles, params, CFG)
        base = float((flow_loss(v, batch.x0, batch.x1, batch.frozen)
                      + 0.1 * wavelet_loss(v, batch.x0, batch.x1, batch.frozen)).data)
        x0p, x1p = batch.x0.copy(), batch.x1.copy()
        x0p[0, 1] += 5.0
        x1p[0, 1] -= 2.0
        pert = float((flow_loss(v, x0p, x1p, batch.frozen)
                      + 0.1 * wavelet_loss(v, x0p, x1p, batch.frozen)).data)
        assert base == pert

    def test_frozen_view_input_is_clean_latent(self):
        batch = toy_batch(23, n=1, frozen=np.array([False, True]))
        x_tau = interpolate(batch.x0, batch.x1, batch.tau)
        assert np.array_equal(x_tau[0, 1], batch.x1[0, 1])
        assert not np.array_equal(x_tau[0, 0], batch.x1[0, 0])


class StubVelocity:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x, tau_vec):
        self.calls += 1
        return self.fn(x, tau_vec)


class TestEulerSample:
    def test_constant_field_telescopes(self):
        c = 0.37
        for steps in (1, 5, 30):
            stub = StubVelocity(lambda x, t: np.full_like(x, c))
            out = euler_sample(stub, SHAPE, None, np.zeros(2, bool),
                               SamplerConfig(steps=steps, seed=5))
            x0 = RandomStream(5, 0).normal((2,) + SHAPE)
            assert np.abs(out - (x0 + c)).max() < 1e-5
            assert stub.calls == steps

    @pytest.mark.parametrize("steps", [1, 5, 30])
    def test_oracle_velocity_recovers_target(self, steps):
        rs = RandomStream(24, 0)
        x1 = rs.child(0).normal((2,) + SHAPE)
        x0 = RandomStream(6, 0).normal((2,) + SHAPE)
        stub = StubVelocity(lambda x, t: x1 - x0)
        out = euler_sample(stub, SHAPE, None, np.zeros(2, bool),
                           SamplerConfig(steps=steps, seed=6))
        assert np.abs(out - x1).max() < 1e-5

    def test_frozen_views_bitwise_constant(self):
        rs = RandomStream(25, 0)
        clean = rs.child(0).normal((2,) + SHAPE)
        mask = np.array([True, False])
        seen_tau = []

        def fn(x, tau_vec):
            seen_tau.append(tau_vec.copy())
            return np.ones_like(x)

        out = euler_sample(StubVelocity(fn), SHAPE, clean, mask,
                           SamplerConfig(steps=4, seed=7))
        assert out[0].tobytes() == clean[0].astype(np.float32).tobytes()
        assert all(t[0] == 1.0 for t in seen_tau)
        assert [t[1] for t in seen_tau] == [0.0, 0.25, 0.5, 0.75]

    def test_deterministic(self):
        stub = lambda x, t: 0.1 * x
        a = euler_sample(stub, SHAPE, None, np.zeros(2, bool), SamplerConfig(5, 8))
        b = euler_sample(stub, SHAPE, None, np.zeros(2, bool), SamplerConfig(5, 8))
        assert np.array_equal(a, b)

    def test_all_frozen_rejected(self):
        with pytest.raises(ValueError):
            euler_sample(lambda x, t: x, SHAPE, np.zeros((2,) + SHAPE, np.float32),
                         np.ones(2, bool), SamplerConfig(2, 9))


class TestAutoregressiveExtend:
    def test_returns_target_and_preserves_given(self):
        rs = RandomStream(26, 0)
        given = {0: rs.child(0).normal(SHAPE)}
        stub = lambda x, t: np.zeros_like(x)
        out = autoregressive_extend(given, 1, stub, SHAPE, CFG, SamplerConfig(3, 10))
        assert out.shape == SHAPE
        x0 = RandomStream(10, 0).normal((CFG.views,) + SHAPE)
        assert np.allclose(out, x0[1])

    def test_bad_slot_arrangements_rejected(self):
        rs = RandomStream(27, 0)
        stub = lambda x, t: np.zeros_like(x)
        full = {0: rs.child(0).normal(SHAPE), 1: rs.child(1).normal(SHAPE)}
        with pytest.raises(ValueError):
            autoregressive_extend(full, 1, stub, SHAPE, CFG, SamplerConfig(2, 11))
        with pytest.raises(ValueError):
            autoregressive_extend({}, 0, stub, SHAPE, CFG, SamplerConfig(2, 11))
        with pytest.raises(ValueError):
            autoregressive_extend({0: full[0]}, 0, stub, SHAPE, CFG,
                                  SamplerConfig(2, 11))
