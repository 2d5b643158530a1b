import json

import numpy as np
import pytest

from conftest import single
from sips.denoiser import (
    MlpDenoiser,
    OracleEtaDenoiser,
    TrainConfig,
    TrainedDenoiser,
    ZeroDenoiser,
    draw_training_batch,
    forward,
    load_model,
    loss_and_grad,
    save_model,
    train,
)
from sips.oracle import clean_eta
from sips.schedule import NoiseSchedule

SCHED = NoiseSchedule(c=0.5, a=0.1)


def numeric_grad(net, sched, batch, param, idx, h=1e-5):
    old = param[idx]
    param[idx] = old + h
    up, _ = loss_and_grad(net, sched, *batch)
    param[idx] = old - h
    down, _ = loss_and_grad(net, sched, *batch)
    param[idx] = old
    return (up - down) / (2 * h)


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-7)


class TestForward:
    def test_zero_network_outputs_zero(self, rng):
        net = MlpDenoiser.zeros(3)
        out = forward(net, SCHED, rng.uniform(size=20), rng.standard_normal((20, 3)))
        np.testing.assert_array_equal(out, 0.0)

    def test_output_is_linear_in_final_weights(self, rng):
        net = MlpDenoiser.init(2, seed=4)
        x = rng.standard_normal((5, 2))
        base = forward(net, SCHED, 0.3, x)
        scaled = net.copy()
        scaled.weights[-1] *= 2.5
        np.testing.assert_allclose(forward(scaled, SCHED, 0.3, x), 2.5 * base, rtol=1e-14)

    def test_feature_layout(self):
        net = MlpDenoiser.init(2, hidden=(5,), seed=0)
        assert net.layer_sizes == [4, 5, 2]
        assert [w.shape for w in net.weights] == [(5, 4), (2, 5)]

    def test_golden_output(self):
        net = MlpDenoiser.init(2, seed=2024)
        out = forward(net, SCHED, 0.3, np.array([0.5, -1.0]))
        np.testing.assert_allclose(out, GOLDEN, rtol=1e-12)

    def test_dimension_mismatch(self):
        net = MlpDenoiser.init(2, seed=0)
        with pytest.raises(ValueError):
            forward(net, SCHED, 0.3, np.zeros(3))

    def test_glorot_bounds(self):
        net = MlpDenoiser.init(1, hidden=(64, 64), seed=1)
        for w in net.weights:
            fan_out, fan_in = w.shape
            assert np.max(np.abs(w)) <= np.sqrt(6 / (fan_in + fan_out))
        for b in net.biases:
            assert not b.any()

    def test_invalid_layer_sizes(self):
        with pytest.raises(ValueError):
            MlpDenoiser([3, 4, 2], [np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])


# Captured once from MlpDenoiser.init(2, seed=2024) evaluated at t=0.3, x=(0.5, -1.0).
GOLDEN = np.array([0.1932836087936059, 0.1750857862236982])


class TestLoss:
    @pytest.mark.parametrize("dim", [1, 4])
    def test_zero_network_loss_is_dimension(self, dim):
        rng = np.random.default_rng(dim)
        n = 20_000
        s = rng.standard_normal((n, dim))
        z = rng.standard_normal((n, dim))
        t = rng.uniform(size=n)
        loss, _ = loss_and_grad(MlpDenoiser.zeros(dim), SCHED, s, z, t)
        se = np.sqrt(2 * dim / n)  # Var(|Z|^2) = 2d
        assert abs(loss - dim) < 3 * se

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        net = MlpDenoiser.init(2, hidden=(16, 12), seed=3)
        for b in net.biases:
            b[:] = rng.normal(0, 0.3, b.shape)
        batch = (rng.standard_normal((32, 2)), rng.standard_normal((32, 2)), rng.uniform(size=32))
        _, grads = loss_and_grad(net, SCHED, *batch)
        params = net.params()
        for param, grad in zip(params, grads):
            assert grad.shape == param.shape
            flat_count = param.size
            picks = rng.choice(flat_count, size=min(50, flat_count), replace=False)
            for flat in picks:
                idx = np.unravel_index(flat, param.shape)
                fd = numeric_grad(net, SCHED, batch, param, idx)
                assert relative_error(grad[idx], fd) < 1e-4

    def test_non_finite_loss_raises(self):
        from sips.errors import DivergenceError

        net = MlpDenoiser.init(1, seed=0)
        net.weights[-1][:] = np.inf
        with pytest.raises(DivergenceError):
            loss_and_grad(net, SCHED, np.zeros((2, 1)), np.ones((2, 1)), np.full(2, 0.5))


class TestTraining:
    def test_zero_learning_rate_keeps_loss_trace_constant(self, toy_prior):
        cfg = TrainConfig(learning_rate=0.0, iterations=30, batch_size=16)
        net0 = MlpDenoiser.init(1, seed=0)
        net, losses = train(net0, SCHED, toy_prior, cfg)
        for a, b in zip(net.params(), net0.params()):
            np.testing.assert_array_equal(a, b)
        # the trace is the loss of a fixed network on fresh batches
        rng = np.random.default_rng(cfg.seed)
        expected = [
            loss_and_grad(net0, SCHED, *draw_training_batch(toy_prior, rng, 16))[0]
            for _ in range(30)
        ]
        np.testing.assert_array_equal(losses, expected)

    def test_zero_learning_rate_on_fixed_batch_is_flat(self, toy_prior):
        net = MlpDenoiser.init(1, seed=0)
        rng = np.random.default_rng(0)
        batch = draw_training_batch(toy_prior, rng, 64)
        first, _ = loss_and_grad(net, SCHED, *batch)
        trained, _ = train(net, SCHED, toy_prior, TrainConfig(learning_rate=0.0, iterations=5))
        assert loss_and_grad(trained, SCHED, *batch)[0] == first

    def test_degradation_agnostic(self):
        a = single(var_yy=2.0, cov_sy=1.0, mean_y=0.0)
        b = single(var_yy=7.0, cov_sy=-2.0, mean_y=3.0)
        cfg = TrainConfig(iterations=50, batch_size=32, seed=9)
        na, _ = train(MlpDenoiser.init(1, seed=1), SCHED, a, cfg)
        nb, _ = train(MlpDenoiser.init(1, seed=1), SCHED, b, cfg)
        for x, y in zip(na.params(), nb.params()):
            np.testing.assert_array_equal(x, y)

    def test_short_training_reduces_loss(self, toy_prior):
        net, losses = train(
            MlpDenoiser.init(1, seed=0), SCHED, toy_prior, TrainConfig(iterations=1500)
        )
        assert losses[-200:].mean() < losses[:50].mean()

    def test_divergence_reports_iteration(self, toy_prior):
        from sips.errors import DivergenceError

        net = MlpDenoiser.init(1, seed=0)
        with pytest.raises(DivergenceError) as err:
            train(net, SCHED, toy_prior, TrainConfig(learning_rate=1e308, iterations=20))
        assert err.value.step >= 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(first_moment_decay=1.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestRealizations:
    def test_zero(self):
        np.testing.assert_array_equal(ZeroDenoiser()(0.4, np.ones((3, 2))), 0.0)

    def test_oracle_uses_training_sigma(self, toy_prior):
        den = OracleEtaDenoiser(toy_prior, SCHED)
        x = np.array([0.3, -1.2, 2.0])
        sigma = SCHED.training_sigma(0.25)
        np.testing.assert_allclose(den(0.25, x), sigma * x / (1 + sigma**2), rtol=1e-14)
        np.testing.assert_allclose(den(0.25, x), clean_eta(toy_prior, sigma, x[:, None])[:, 0])

    def test_trained_applies_pointwise_to_any_shape(self, rng):
        net = MlpDenoiser.init(1, seed=0)
        den = TrainedDenoiser(net, SCHED)
        x = rng.standard_normal((2, 5, 3))
        out = den(0.6, x)
        assert out.shape == x.shape
        np.testing.assert_allclose(out.ravel(), forward(net, SCHED, 0.6, x.reshape(-1, 1))[:, 0])


def test_model_json_round_trip(tmp_path):
    net = MlpDenoiser.init(2, hidden=(7, 5), seed=8)
    sched = NoiseSchedule(c=0.3, a=0.05)
    path = tmp_path / "model.json"
    save_model(path, net, sched, seed=8)
    doc = json.loads(path.read_text())
    assert doc["version"] == 1 and doc["layer_sizes"] == [4, 7, 5, 2]
    net2, sched2, seed = load_model(path)
    assert sched2 == sched and seed == 8
    for a, b in zip(net.params(), net2.params()):
        np.testing.assert_array_equal(a, b)


def test_model_json_rejects_unknown_format(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"format": "other", "version": 1}))
    with pytest.raises(ValueError):
        load_model(path)
