"""
Gradient checks for the network layers and losses.

Every layer is cast to float64 and its analytic backward pass compared with
central finite differences on a random projection of the output.
"""

import unittest
from typing import Callable

import numpy as np
import numpy.testing as npt

from doanet.errors import ValidationError
from doanet.layers import (
    GRU,
    BatchNorm,
    BiGRU,
    Conv2D,
    Dense,
    Dropout,
    EdgePadFreq,
    Layer,
    MaxPoolFreq,
    bce_loss,
    mse_loss,
)

EPS = 1e-6
TOLERANCE = 1e-4
SAMPLES = 25


def _relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a) + abs(b), 1e-8)


def _numeric(f: Callable[[], float], array: np.ndarray, index: tuple[int, ...]) -> float:
    old = array[index]
    array[index] = old + EPS
    up = f()
    array[index] = old - EPS
    down = f()
    array[index] = old
    return (up - down) / (2 * EPS)


def _sample_indices(rng: np.random.Generator, shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    flat = rng.choice(int(np.prod(shape)), size=min(SAMPLES, int(np.prod(shape))), replace=False)
    return [tuple(int(v) for v in np.unravel_index(i, shape)) for i in flat]


class GradientCase(unittest.TestCase):
    def check_layer(self, layer: Layer, x: np.ndarray, training: bool = False) -> None:
        rng = np.random.default_rng(123)
        layer.cast(np.float64)
        x = x.astype(np.float64)
        projection = rng.standard_normal(layer.forward(x, training).shape)

        def loss() -> float:
            return float(np.sum(layer.forward(x, training) * projection))

        layer.forward(x, training)
        dx = layer.backward(projection)
        grads = {k: v.copy() for k, v in layer.grads.items()}

        for idx in _sample_indices(rng, x.shape):
            self.assertLess(_relative_error(dx[idx], _numeric(loss, x, idx)), TOLERANCE, f"input {idx}")
        for key, param in layer.params.items():
            for idx in _sample_indices(rng, param.shape):
                num = _numeric(loss, param, idx)
                self.assertLess(_relative_error(grads[key][idx], num), TOLERANCE, f"{key} {idx}")


class TestConv2D(GradientCase):
    def test_relu_gradients(self) -> None:
        rng = np.random.default_rng(0)
        layer = Conv2D("c", 3, 4, rng, activation="relu")
        layer.params["b"] = rng.standard_normal(4).astype(np.float32) * 0.1
        self.check_layer(layer, rng.standard_normal((2, 6, 8, 3)))

    def test_linear_gradients(self) -> None:
        rng = np.random.default_rng(1)
        self.check_layer(Conv2D("c", 3, 2, rng, activation="linear"), rng.standard_normal((1, 6, 8, 3)))

    def test_identity_kernel_passes_input_through(self) -> None:
        rng = np.random.default_rng(2)
        layer = Conv2D("c", 3, 3, rng, activation="linear")
        w = np.zeros((3, 3, 3, 3), dtype=np.float32)
        w[1, 1] = np.eye(3)
        layer.params["W"] = w
        x = rng.standard_normal((2, 5, 7, 3)).astype(np.float32)
        npt.assert_allclose(layer.forward(x), x, rtol=1e-6, atol=1e-6)

    def test_rejects_wrong_channels(self) -> None:
        layer = Conv2D("c", 3, 2, np.random.default_rng(0))
        with self.assertRaises(ValidationError):
            layer.forward(np.zeros((1, 4, 4, 2)))
        with self.assertRaises(ValidationError):
            Conv2D("c", 3, 2, np.random.default_rng(0), activation="tanh")


class TestBatchNorm(GradientCase):
    def test_training_gradients(self) -> None:
        rng = np.random.default_rng(3)
        layer = BatchNorm("bn", 3)
        layer.params["gamma"] = rng.uniform(0.5, 1.5, 3).astype(np.float32)
        layer.params["beta"] = rng.standard_normal(3).astype(np.float32)
        self.check_layer(layer, rng.standard_normal((2, 4, 5, 3)), training=True)

    def test_inference_gradients(self) -> None:
        rng = np.random.default_rng(4)
        layer = BatchNorm("bn", 2)
        layer.buffers["running_mean"] = rng.standard_normal(2).astype(np.float32)
        layer.buffers["running_var"] = rng.uniform(0.5, 2.0, 2).astype(np.float32)
        self.check_layer(layer, rng.standard_normal((1, 3, 4, 2)), training=False)

    def test_training_output_is_normalized(self) -> None:
        rng = np.random.default_rng(5)
        layer = BatchNorm("bn", 2)
        x = 3.0 + 2.0 * rng.standard_normal((4, 10, 16, 2))
        y = layer.forward(x, training=True)
        npt.assert_allclose(y.mean(axis=(0, 1, 2)), 0.0, atol=1e-6)
        npt.assert_allclose(y.std(axis=(0, 1, 2)), 1.0, atol=1e-3)
        self.assertFalse(np.allclose(layer.buffers["running_mean"], 0.0))


class TestPooling(GradientCase):
    def test_max_pool_gradients(self) -> None:
        rng = np.random.default_rng(6)
        self.check_layer(MaxPoolFreq("p", 4), rng.standard_normal((2, 3, 8, 2)))

    def test_pool_takes_block_maximum(self) -> None:
        x = np.array([1.0, 5.0, 2.0, 3.0, 7.0, 0.0]).reshape(1, 1, 6, 1)
        y = MaxPoolFreq("p", 3).forward(x)
        npt.assert_array_equal(y.ravel(), [5.0, 7.0])

    def test_pool_of_one_is_identity(self) -> None:
        x = np.random.default_rng(7).standard_normal((1, 2, 5, 3))
        layer = MaxPoolFreq("p", 1)
        npt.assert_array_equal(layer.forward(x), x)
        npt.assert_array_equal(layer.backward(x), x)

    def test_pool_must_divide(self) -> None:
        with self.assertRaises(ValidationError):
            MaxPoolFreq("p", 3).forward(np.zeros((1, 1, 8, 1)))
        with self.assertRaises(ValidationError):
            MaxPoolFreq("p", 0)

    def test_edge_pad(self) -> None:
        rng = np.random.default_rng(8)
        layer = EdgePadFreq("pad", 9)
        x = rng.standard_normal((1, 2, 6, 1))
        y = layer.forward(x)
        self.assertEqual(y.shape, (1, 2, 9, 1))
        npt.assert_array_equal(y[:, :, 6:, 0], np.repeat(x[:, :, -1:, 0], 3, axis=2))
        self.check_layer(layer, x)
        with self.assertRaises(ValidationError):
            EdgePadFreq("pad", 4).forward(x)


class TestRecurrent(GradientCase):
    def test_gru_gradients(self) -> None:
        rng = np.random.default_rng(9)
        layer = GRU("g", 3, 4, rng)
        layer.params["b_in"] = rng.standard_normal(layer.params["b_in"].shape).astype(np.float32) * 0.1
        layer.params["b_rec"] = rng.standard_normal(layer.params["b_rec"].shape).astype(np.float32) * 0.1
        self.check_layer(layer, rng.standard_normal((2, 5, 3)))

    def test_bigru_gradients(self) -> None:
        rng = np.random.default_rng(10)
        layer = BiGRU("bg", 3, 2, rng)
        y = layer.forward(rng.standard_normal((2, 4, 3)).astype(np.float32))
        self.assertEqual(y.shape, (2, 4, 4))
        self.check_layer(layer, rng.standard_normal((2, 4, 3)))

    def test_gru_output_is_bounded(self) -> None:
        layer = GRU("g", 2, 3, np.random.default_rng(11))
        y = layer.forward(100.0 * np.random.default_rng(12).standard_normal((1, 20, 2)))
        self.assertTrue(np.all(np.abs(y) <= 1.0))

    def test_bigru_backward_half_sees_the_future(self) -> None:
        layer = BiGRU("bg", 1, 2, np.random.default_rng(13))
        x = np.zeros((1, 5, 1))
        base = layer.forward(x)
        x[0, 4, 0] = 1.0
        changed = layer.forward(x)
        # forward half at t=0 cannot see t=4, backward half can
        npt.assert_array_equal(changed[0, 0, :2], base[0, 0, :2])
        self.assertFalse(np.allclose(changed[0, 0, 2:], base[0, 0, 2:]))


class TestDense(GradientCase):
    def test_linear_gradients(self) -> None:
        rng = np.random.default_rng(14)
        self.check_layer(Dense("d", 5, 3, rng), rng.standard_normal((2, 4, 5)))

    def test_sigmoid_gradients(self) -> None:
        rng = np.random.default_rng(15)
        self.check_layer(Dense("d", 5, 3, rng, activation="sigmoid"), rng.standard_normal((2, 4, 5)))

    def test_identity_weights(self) -> None:
        layer = Dense("d", 3, 3, np.random.default_rng(0))
        layer.params["W"] = np.eye(3, dtype=np.float32)
        x = np.random.default_rng(16).standard_normal((2, 3)).astype(np.float32)
        npt.assert_allclose(layer.forward(x), x, rtol=1e-6)


class TestDropout(unittest.TestCase):
    def test_identity_outside_training(self) -> None:
        x = np.ones((4, 10))
        layer = Dropout("dr", 0.5, np.random.default_rng(0))
        npt.assert_array_equal(layer.forward(x), x)
        npt.assert_array_equal(layer.backward(x), x)

    def test_inverted_scaling(self) -> None:
        layer = Dropout("dr", 0.25, np.random.default_rng(1))
        y = layer.forward(np.ones((200, 200)), training=True)
        self.assertEqual(set(np.unique(y).tolist()) - {0.0}, {1.0 / 0.75})
        self.assertAlmostEqual(float(y.mean()), 1.0, delta=0.02)
        npt.assert_array_equal(layer.backward(np.ones_like(y)), y)

    def test_rate_range(self) -> None:
        with self.assertRaises(ValidationError):
            Dropout("dr", 1.0, np.random.default_rng(0))


class TestLosses(unittest.TestCase):
    def test_mse_value_and_gradient(self) -> None:
        rng = np.random.default_rng(17)
        pred = rng.standard_normal((2, 3, 4))
        target = rng.standard_normal((2, 3, 4))
        loss, grad = mse_loss(pred, target)
        self.assertAlmostEqual(loss, float(np.mean((pred - target) ** 2)))
        for idx in _sample_indices(rng, pred.shape):
            num = _numeric(lambda: mse_loss(pred, target)[0], pred, idx)
            self.assertLess(_relative_error(grad[idx], num), TOLERANCE)

    def test_mse_mask_ignores_padded_frames(self) -> None:
        rng = np.random.default_rng(18)
        pred = rng.standard_normal((1, 4, 3))
        target = np.zeros_like(pred)
        mask = np.array([[1.0, 1.0, 0.0, 0.0]])
        loss, grad = mse_loss(pred, target, mask)
        self.assertAlmostEqual(loss, float(np.mean(pred[0, :2] ** 2)))
        npt.assert_array_equal(grad[0, 2:], 0.0)
        self.assertEqual(mse_loss(pred, target, np.zeros((1, 4)))[0], 0.0)
        with self.assertRaises(ValidationError):
            mse_loss(pred, target, np.ones((4, 1)))

    def test_bce_value_and_gradient(self) -> None:
        rng = np.random.default_rng(19)
        prob = rng.uniform(0.05, 0.95, (2, 3, 4))
        target = (rng.random((2, 3, 4)) > 0.5).astype(np.float64)
        loss, grad = bce_loss(prob, target)
        expected = -np.mean(target * np.log(prob) + (1 - target) * np.log(1 - prob))
        self.assertAlmostEqual(loss, float(expected))
        for idx in _sample_indices(rng, prob.shape):
            num = _numeric(lambda: bce_loss(prob, target)[0], prob, idx)
            self.assertLess(_relative_error(grad[idx], num), TOLERANCE)

    def test_bce_clips_saturated_probabilities(self) -> None:
        prob = np.array([[[0.0, 1.0]]])
        target = np.array([[[1.0, 0.0]]])
        loss, grad = bce_loss(prob, target)
        self.assertTrue(np.isfinite(loss))
        self.assertAlmostEqual(loss, -np.log(1e-7), places=4)
        npt.assert_array_equal(grad, 0.0)

    def test_half_probability_costs_log_two(self) -> None:
        prob = np.full((1, 2, 5), 0.5)
        self.assertAlmostEqual(bce_loss(prob, np.zeros_like(prob))[0], np.log(2.0))


if __name__ == "__main__":
    unittest.main()
