import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifcomp.errors import ConfigurationError, DimensionError, FormatError
from ifcomp.model import (
    MlpParams,
    energy,
    forward,
    grad_energy,
    init_mlp,
    kl_temp,
    softmax_temp,
)


def naive_forward(params, x):
    h = list(x)
    for li, (w, b) in enumerate(params.layers):
        out = []
        for i in range(w.shape[0]):
            s = b[i]
            for j in range(w.shape[1]):
                s += w[i, j] * h[j]
            out.append(s)
        h = [max(v, 0.0) for v in out] if li < len(params.layers) - 1 else out
    return np.array(h)


def central_difference(params, x, y, beta, h=1e-5):
    theta = params.flatten()
    out = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (energy(params.unflatten(theta + e), x, y, beta)
                  - energy(params.unflatten(theta - e), x, y, beta)) / (2 * h)
    return out


def assert_matches_fd(params, x, y, beta):
    g = grad_energy(params, x, y, beta)
    fd = central_difference(params, x, y, beta)
    # relative per coordinate, with an absolute floor for near-zero entries
    err = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
    assert err.max() <= 1e-4


class TestForward:
    def test_zero_params_give_zero_logits(self):
        p = MlpParams(((np.zeros((4, 3)), np.zeros(4)), (np.zeros((2, 4)), np.zeros(2))))
        np.testing.assert_array_equal(forward(p, np.ones(3)).logits, np.zeros(2))

    def test_linear_layer_basis_vector(self, rng):
        w, b = rng.normal(size=(3, 4)), rng.normal(size=3)
        p = MlpParams(((w, b),))
        np.testing.assert_allclose(forward(p, np.eye(4)[0]).logits, w[:, 0] + b, rtol=1e-15)

    def test_matches_naive_loop(self, rng, small_net):
        x = rng.normal(size=5)
        np.testing.assert_allclose(forward(small_net, x).logits, naive_forward(small_net, x), rtol=1e-12)

    def test_batch_equals_rows(self, rng, small_net):
        x = rng.normal(size=(4, 5))
        batch = forward(small_net, x).logits
        for i in range(4):
            np.testing.assert_allclose(batch[i], forward(small_net, x[i]).logits, rtol=1e-12)

    def test_dimension_mismatch(self, small_net):
        with pytest.raises(DimensionError):
            forward(small_net, np.ones(4))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_temp([0.0, 0.0, 0.0], 3.7), np.full(3, 1 / 3), rtol=1e-15)

    def test_small_beta_limit(self):
        np.testing.assert_allclose(softmax_temp([10.0, -10.0], 1e-9), [0.5, 0.5], atol=1e-6)

    def test_direct_evaluation(self):
        z = np.array([1.0, 2.0, 3.0])
        direct = np.exp(z) / np.exp(z).sum()
        np.testing.assert_allclose(softmax_temp(z, 1.0), direct, rtol=1e-12, atol=1e-12)

    def test_large_logits_are_stable(self):
        p = softmax_temp([1000.0, 0.0], 1.0)
        assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("beta", [0.0, -1.0, float("nan"), float("inf")])
    def test_rejects_bad_beta(self, beta):
        with pytest.raises(ConfigurationError):
            softmax_temp([0.0, 1.0], beta)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(1e-3, 10))
    def test_temperature_folds_into_logits(self, logits, beta):
        z = np.array(logits)
        a, b = softmax_temp(z, beta), softmax_temp(beta * z, 1.0)
        assert np.all((a > 0) | (b == 0))
        assert np.sum(a) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(a, b)


class TestEnergy:
    def test_uniform_ten_classes(self):
        p = MlpParams(((np.zeros((10, 2)), np.zeros(10)),))
        assert energy(p, np.ones(2), 3, 0.5) == pytest.approx(np.log(10), abs=1e-12)

    def test_confident_label_has_zero_energy(self):
        p = MlpParams(((np.zeros((3, 2)), np.array([100.0, 0.0, 0.0])),))
        assert energy(p, np.ones(2), 0, 1.0) <= 1e-6

    def test_matches_log_softmax(self, rng, small_net):
        x = rng.normal(size=5)
        p = softmax_temp(forward(small_net, x).logits, 0.6)
        assert energy(small_net, x, 2, 0.6) == pytest.approx(-np.log(p[2]), rel=1e-12)

    def test_invalid_label(self, small_net):
        with pytest.raises(ConfigurationError):
            energy(small_net, np.zeros(5), 3, 1.0)

    def test_shift_invariance(self, rng):
        w, b = rng.normal(size=(4, 3)), rng.normal(size=4)
        x = rng.normal(size=3)
        base = MlpParams(((w, b),))
        shifted = MlpParams(((w, b + 7.5),))
        for y in range(4):
            assert energy(shifted, x, y, 0.8) == pytest.approx(energy(base, x, y, 0.8), abs=1e-10)


class TestGradEnergy:
    def test_saturated_gradient_vanishes(self):
        p = MlpParams(((np.zeros((3, 2)), np.array([200.0, 0.0, 0.0])),))
        assert np.linalg.norm(grad_energy(p, np.ones(2), 0, 1.0)) <= 1e-8

    def test_linear_closed_form(self, rng):
        w, b = rng.normal(size=(3, 4)), rng.normal(size=3)
        x, y, beta = rng.normal(size=4), 1, 0.7
        p = softmax_temp(w @ x + b, beta)
        resid = beta * (p - np.eye(3)[y])
        expected = np.concatenate([np.outer(resid, x).ravel(), resid])
        np.testing.assert_allclose(grad_energy(MlpParams(((w, b),)), x, y, beta), expected, rtol=1e-10, atol=1e-14)

    def test_two_layer_finite_differences(self, rng):
        p = init_mlp((4, 6, 3), seed=5)
        assert_matches_fd(p, rng.normal(size=4), 2, 1.3)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences_property(self, seed):
        rng = np.random.default_rng(seed)
        depth = 1 + seed % 3
        sizes = [int(rng.integers(2, 5))] + [int(rng.integers(2, 6)) for _ in range(depth - 1)] + [int(rng.integers(2, 5))]
        p = init_mlp(sizes, seed=seed)
        # nudge biases so no ReLU sits exactly at its kink
        p = MlpParams(tuple((w, b + 0.05) for w, b in p.layers))
        x = rng.normal(size=sizes[0])
        assert_matches_fd(p, x, int(rng.integers(sizes[-1])), float(rng.uniform(0.2, 2.0)))


class TestKl:
    def test_identical(self, rng):
        z = rng.normal(size=4)
        assert kl_temp(z, z, 0.9) == 0.0

    def test_one_hot_vs_uniform(self):
        assert kl_temp([60.0, 0.0], [0.0, 0.0], 1.0) == pytest.approx(np.log(2), rel=1e-12)

    def test_direct_formula(self, rng):
        a, b = rng.normal(size=5), rng.normal(size=5)
        p, q = softmax_temp(a, 1.4), softmax_temp(b, 1.4)
        assert kl_temp(a, b, 1.4) == pytest.approx(np.sum(p * np.log(p / q)), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            kl_temp([0.0, 1.0], [0.0, 1.0, 2.0], 1.0)


class TestSerialization:
    def test_round_trip_is_exact(self, tmp_path, small_net):
        path = tmp_path / "m.json"
        small_net.save(path)
        loaded = MlpParams.load(path)
        np.testing.assert_array_equal(loaded.flatten(), small_net.flatten())
        assert loaded.sizes == small_net.sizes

    def test_wrong_format(self):
        with pytest.raises(FormatError):
            MlpParams.from_dict({"format": "other", "version": 1})

    def test_flatten_order(self):
        w0, b0 = np.arange(6.0).reshape(2, 3), np.array([10.0, 11.0])
        w1, b1 = np.array([[20.0, 21.0]]), np.array([30.0])
        p = MlpParams(((w0, b0), (w1, b1)))
        np.testing.assert_array_equal(p.flatten(), [0, 1, 2, 3, 4, 5, 10, 11, 20, 21, 30])
        np.testing.assert_array_equal(p.unflatten(p.flatten()).flatten(), p.flatten())
