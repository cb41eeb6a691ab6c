import numpy as np
import pytest

from flowradio.core import AffineTransform
from flowradio.flowmodel import (
    Architecture,
    TrainingDivergedError,
    VelocityField,
    denoise,
    euler_integrate,
    fm_loss,
    interpolate_path,
    loss_gradient,
    sample,
    zero_field_loss,
)

from conftest import StubField


def tiny_field(seed=0, dtype="float64", **kw):
    params = dict(hidden_layers=2, channels=4, dilations=(1, 2, 1), random_state=seed, dtype=dtype)
    params.update(kw)
    return VelocityField(**params).initialize((4, 4))


def random_batch(rng, n=3, shape=(4, 4)):
    return [(rng.standard_normal(shape), rng.uniform(-1, 1, shape), float(rng.uniform())) for _ in range(n)]


def central_difference(field, batch, idx, h=1e-4):
    theta = field.theta_
    old = theta[idx]
    theta[idx] = old + h
    plus = fm_loss(field, batch)
    theta[idx] = old - h
    minus = fm_loss(field, batch)
    theta[idx] = old
    return (plus - minus) / (2 * h)


class TestInterpolatePath:
    def test_endpoints(self, rng):
        z0, z1 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        np.testing.assert_array_equal(interpolate_path(z0, z1, 0.0), z0)
        np.testing.assert_array_equal(interpolate_path(z0, z1, 1.0), z1)

    def test_midpoint(self):
        np.testing.assert_array_equal(interpolate_path(np.zeros((2, 2)), np.full((2, 2), 2.0), 0.5), np.ones((2, 2)))

    @pytest.mark.parametrize("t", [-0.1, 1.5])
    def test_out_of_range(self, t):
        with pytest.raises(ValueError):
            interpolate_path(np.zeros((2, 2)), np.zeros((2, 2)), t)


class TestLoss:
    def test_perfect_regression(self, rng):
        batch = random_batch(rng)
        targets = {t: z1 - z0 for z0, z1, t in batch}
        ideal = StubField(lambda t, z: targets[t])
        assert fm_loss(ideal, batch) == 0.0

    def test_zero_field(self):
        batch = [(np.zeros((2, 2)), np.ones((2, 2)), 0.3), (np.ones((2, 2)), -np.ones((2, 2)), 0.7)]
        # (4 * 1 + 4 * 4) / 2
        assert fm_loss(StubField(lambda t, z: np.zeros_like(z), (2, 2)), batch) == pytest.approx(10.0)
        assert zero_field_loss(batch) == pytest.approx(10.0)

    def test_batch_order(self, rng):
        f = tiny_field()
        batch = random_batch(rng, 4)
        assert fm_loss(f, batch) == pytest.approx(fm_loss(f, batch[::-1]), rel=1e-12)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            fm_loss(tiny_field(), [])


class TestGradient:
    def test_small_network(self):
        assert tiny_field().n_params_ <= 500

    def test_zero_output_layer_zero_targets(self, rng):
        f = tiny_field()
        params = f.named_parameters()
        params["conv2.weight"][...] = 0.0
        params["conv2.bias"][...] = 0.0
        z = rng.standard_normal((4, 4))
        batch = [(z, z, 0.4), (z, z, 0.9)]
        assert np.all(loss_gradient(f, batch) == 0.0)

    def test_matches_finite_differences(self, rng):
        f = tiny_field(seed=3)
        batch = random_batch(rng)
        grad = loss_gradient(f, batch)
        for idx in rng.choice(f.n_params_, 20, replace=False):
            fd = central_difference(f, batch, idx)
            scale = max(abs(fd), abs(grad[idx]), 1e-6)
            assert abs(fd - grad[idx]) / scale < 1e-4

    def test_mean_of_per_sample_gradients(self, rng):
        f = tiny_field(seed=1)
        batch = random_batch(rng, 4)
        whole = loss_gradient(f, batch)
        parts = np.mean([loss_gradient(f, [b]) for b in batch], axis=0)
        np.testing.assert_allclose(whole, parts, rtol=1e-10, atol=1e-12)

    def test_float32_close_to_float64(self, rng):
        batch = random_batch(rng)
        g64 = loss_gradient(tiny_field(seed=2), batch)
        g32 = loss_gradient(tiny_field(seed=2, dtype="float32"), batch)
        np.testing.assert_allclose(g32, g64, rtol=1e-3, atol=1e-4)


def small_maps(rng, n=12):
    base = np.linspace(-30, 0, 64).reshape(8, 8)
    return np.stack([base + rng.normal(0, 2, (8, 8)) for _ in range(n)])


class TestTrain:
    def test_one_epoch_deterministic(self, rng):
        X = small_maps(rng)
        kw = dict(hidden_layers=2, channels=8, dilations=(1, 2, 1), n_steps=3, batch_size=4)
        a = VelocityField(**kw).fit(X)
        b = VelocityField(**kw).fit(X)
        assert a.to_bytes() == b.to_bytes()
        assert len(a.loss_history_) == 3

    def test_single_repeated_map_beats_zero_field(self):
        X = np.repeat(np.linspace(-20, 0, 64).reshape(1, 8, 8), 8, axis=0)
        f = VelocityField(hidden_layers=2, channels=8, dilations=(1, 2, 1), n_steps=150,
                          batch_size=8, learning_rate=3e-3).fit(X)
        rng = np.random.default_rng(9)
        z1 = f.transform_.apply(X[0])
        batch = [(rng.standard_normal((8, 8)), z1, rng.uniform()) for _ in range(32)]
        assert fm_loss(f, batch) < zero_field_loss(batch)

    def test_divergence_reported(self, rng):
        X = small_maps(rng)
        f = VelocityField(hidden_layers=2, channels=4, dilations=(1, 1, 1), n_steps=5, batch_size=4,
                          learning_rate=1e30, grad_clip=None)
        with pytest.raises(TrainingDivergedError, match="step"):
            f.fit(X)

    def test_transform_from_data_range(self, rng):
        X = small_maps(rng)
        f = VelocityField(hidden_layers=1, channels=2, dilations=(1, 1), n_steps=1).fit(X)
        z = f.transform_.apply(X)
        assert z.min() == pytest.approx(-1.0) and z.max() == pytest.approx(1.0)

    def test_invalid_config(self, rng):
        with pytest.raises(ValueError):
            VelocityField(n_steps=0).fit(small_maps(rng))
        with pytest.raises(ValueError):
            VelocityField(dilations=(1, 2)).fit(small_maps(rng))


class TestEuler:
    def test_zero_field(self, rng):
        z0 = rng.standard_normal((3, 3))
        for k in (1, 7, 50):
            np.testing.assert_array_equal(euler_integrate(StubField(lambda t, z: np.zeros_like(z)), z0, k), z0)

    def test_constant_field_exact(self, rng):
        z0 = rng.integers(-8, 8, (3, 3)) / 4.0
        for c, k in ((0.5, 4), (-1.25, 8), (3.0, 1)):
            out = euler_integrate(StubField(lambda t, z: np.full_like(z, c)), z0, k)
            np.testing.assert_array_equal(out, z0 + c)

    def test_constant_field_general(self, rng):
        z0 = rng.standard_normal((3, 3))
        out = euler_integrate(StubField(lambda t, z: np.full_like(z, 0.3)), z0, 7)
        np.testing.assert_allclose(out, z0 + 0.3, atol=1e-12)

    def test_linear_decay(self, rng):
        z0 = rng.standard_normal((4, 4))
        out = euler_integrate(StubField(lambda t, z: -z), z0, 1000)
        assert np.max(np.abs(out - z0 * np.exp(-1.0))) < 1e-2

    def test_steps_validated(self):
        with pytest.raises(ValueError):
            euler_integrate(StubField(lambda t, z: z), np.zeros((2, 2)), 0)

    def test_nonfinite_aborts(self):
        with pytest.raises(FloatingPointError, match="step 1"):
            euler_integrate(StubField(lambda t, z: np.full_like(z, np.inf)), np.zeros((2, 2)), 3)


class TestDenoise:
    def test_t_one_identity(self, rng):
        z = rng.standard_normal((3, 3))
        np.testing.assert_array_equal(denoise(StubField(lambda t, z: z * 100), z, 1.0), z)

    def test_linear_stub(self):
        out = denoise(StubField(lambda t, z: -z), np.full((2, 2), 2.0), 0.5)
        np.testing.assert_array_equal(out, np.ones((2, 2)))

    def test_zero_stub(self, rng):
        z = rng.standard_normal((3, 3))
        for t in (0.0, 0.3, 1.0):
            np.testing.assert_array_equal(denoise(StubField(lambda t, z: np.zeros_like(z)), z, t), z)

    def test_ideal_field_recovers_target(self, rng):
        for t in (0.0, 0.25, 0.6, 0.99):
            z0, z1 = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
            ideal = StubField(lambda s, z: z1 - z0)
            np.testing.assert_allclose(denoise(ideal, interpolate_path(z0, z1, t), t), z1, atol=1e-12)


class TestPersistence:
    def test_round_trip_bytes(self, tmp_path, rng):
        f = VelocityField(hidden_layers=2, channels=4, dilations=(1, 2, 1), n_steps=2, batch_size=4).fit(
            small_maps(rng))
        f.save(tmp_path / "a.bin")
        g = VelocityField.load(tmp_path / "a.bin")
        g.save(tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        assert g.architecture_ == f.architecture_
        assert g.transform_ == f.transform_
        z = rng.standard_normal((2, 8, 8))
        np.testing.assert_array_equal(g(0.3, z), f(0.3, z))

    def test_header_layout(self, rng):
        f = tiny_field(dtype="float32")
        raw = f.to_bytes()
        assert raw[:4] == b"FRVF"
        hlen = int.from_bytes(raw[4:8], "little")
        assert len(raw) == 8 + hlen + 4 * f.n_params_

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            VelocityField.from_bytes(b"nope")

    def test_get_params_sklearn(self):
        f = VelocityField(channels=8)
        assert f.get_params()["channels"] == 8
        assert f.set_params(channels=16).channels == 16


def test_architecture_param_count():
    arch = Architecture(hidden_layers=4, channels=32)
    assert arch.n_params == (2 * 32 * 9 + 32) + 3 * (32 * 32 * 9 + 32) + (32 * 9 + 1)


def test_sample_shape(rng):
    f = tiny_field(dtype="float32")
    f.transform_ = AffineTransform.from_range(-40, 10)
    out = sample(f, 3, steps=5, random_state=1)
    assert out.shape == (3, 4, 4)
    np.testing.assert_array_equal(out, sample(f, 3, steps=5, random_state=1))
