"""
Tests for the two-stage network: shapes, parameter bookkeeping and an
end-to-end gradient check on a reduced configuration.
"""

import unittest

import numpy as np
import numpy.testing as npt

from doanet.errors import ValidationError
from doanet.network import DOANet, NetworkConfig

SMALL = NetworkConfig(
    sequence_length=4,
    input_bins=16,
    input_channels=8,
    conv_filters=4,
    conv_pools=(2, 2),
    gru_units=(3,),
    sps_size=10,
    stage2_filters=2,
    stage2_pools=(2,),
    stage2_padded=12,
    fc_units=5,
    stage2_gru_units=(3,),
    doa_size=6,
    dropout=0.0,
)


def _features(rng: np.random.Generator, batch: int = 2, config: NetworkConfig = SMALL) -> np.ndarray:
    shape = (batch, config.sequence_length, config.input_bins, config.input_channels)
    return rng.standard_normal(shape).astype(np.float32)


class TestConfig(unittest.TestCase):
    def test_default_parameter_count(self) -> None:
        cfg = NetworkConfig()
        self.assertEqual(cfg.parameter_count(), 400_870)
        self.assertGreaterEqual(cfg.parameter_count(), 400_000)
        self.assertLessEqual(cfg.parameter_count(), 900_000)
        self.assertEqual(DOANet(cfg).parameter_count(), cfg.parameter_count())

    def test_small_parameter_count_matches_layers(self) -> None:
        net = DOANet(SMALL)
        self.assertEqual(net.parameter_count(), SMALL.parameter_count())
        self.assertEqual(net.get_parameters().count(), SMALL.parameter_count())

    def test_invalid_pools(self) -> None:
        with self.assertRaises(ValidationError):
            NetworkConfig(conv_pools=(3,)).validate()
        with self.assertRaises(ValidationError):
            NetworkConfig(stage2_padded=600).validate()
        with self.assertRaises(ValidationError):
            NetworkConfig(dropout=1.0).validate()

    def test_dict_round_trip(self) -> None:
        self.assertEqual(NetworkConfig.from_dict(SMALL.to_dict()), SMALL)
        data = SMALL.to_dict()
        data["conv_pools"] = list(data["conv_pools"])
        self.assertEqual(NetworkConfig.from_dict(data), SMALL)
        with self.assertRaises(ValidationError):
            NetworkConfig.from_dict({"layers": 3})


class TestForward(unittest.TestCase):
    def test_output_shapes(self) -> None:
        net = DOANet(SMALL, seed=1)
        sps, probs = net.forward(_features(np.random.default_rng(0)))
        self.assertEqual(sps.shape, (2, 4, 10))
        self.assertEqual(probs.shape, (2, 4, 6))
        self.assertTrue(np.all((probs > 0) & (probs < 1)))

    def test_single_sequence_gets_a_batch_axis(self) -> None:
        net = DOANet(SMALL)
        sps, _ = net.forward(_features(np.random.default_rng(1))[0])
        self.assertEqual(sps.shape, (1, 4, 10))

    def test_wrong_input_shape(self) -> None:
        net = DOANet(SMALL)
        with self.assertRaises(ValidationError):
            net.forward(np.zeros((1, 4, 15, 8), dtype=np.float32))

    def test_zero_head_gives_one_half(self) -> None:
        net = DOANet(SMALL)
        head = next(layer for layer in net.layers() if layer.name == "s2.fc_doa")
        head.params["W"][:] = 0.0
        head.params["b"][:] = 0.0
        _, probs = net.forward(_features(np.random.default_rng(2)))
        npt.assert_array_equal(probs, 0.5)

    def test_inference_is_deterministic(self) -> None:
        net = DOANet(NetworkConfig(**{**SMALL.to_dict(), "dropout": 0.25}), seed=3)
        x = _features(np.random.default_rng(3))
        a = net.forward(x)
        b = net.forward(x)
        npt.assert_array_equal(a[0], b[0])
        npt.assert_array_equal(a[1], b[1])

    def test_default_network_runs_a_sequence(self) -> None:
        net = DOANet(NetworkConfig())
        x = np.random.default_rng(4).standard_normal((1, 100, 1024, 8)).astype(np.float32)
        sps, probs = net.forward(x)
        self.assertEqual(sps.shape, (1, 100, 614))
        self.assertEqual(probs.shape, (1, 100, 432))


class TestParameters(unittest.TestCase):
    def test_set_parameters_reproduces_outputs(self) -> None:
        x = _features(np.random.default_rng(5))
        a = DOANet(SMALL, seed=1)
        b = DOANet(SMALL, seed=2)
        self.assertFalse(np.allclose(a.forward(x)[0], b.forward(x)[0]))
        b.set_parameters(a.get_parameters())
        npt.assert_array_equal(a.forward(x)[1], b.forward(x)[1])

    def test_get_parameters_copies(self) -> None:
        net = DOANet(SMALL)
        params = net.get_parameters()
        params.arrays["s1.conv1.W"][:] = 0.0
        self.assertFalse(np.all(net.get_parameters().arrays["s1.conv1.W"] == 0.0))

    def test_mismatches_are_rejected(self) -> None:
        net = DOANet(SMALL)
        other = DOANet(NetworkConfig(**{**SMALL.to_dict(), "fc_units": 6}))
        with self.assertRaises(ValidationError):
            net.set_parameters(other.get_parameters())
        params = net.get_parameters()
        del params.arrays["s1.conv1.b"]
        with self.assertRaises(ValidationError):
            net.set_parameters(params)
        params = net.get_parameters()
        params.arrays["s1.conv1.b"] = np.zeros(7, dtype=np.float32)
        with self.assertRaises(ValidationError):
            net.set_parameters(params)

    def test_buffers_are_included(self) -> None:
        arrays = DOANet(SMALL).get_parameters().arrays
        self.assertIn("s1.bn1.running_mean", arrays)
        self.assertIn("s2.gru1.bwd.U", arrays)


class TestBackward(unittest.TestCase):
    def test_end_to_end_gradients(self) -> None:
        rng = np.random.default_rng(6)
        net = DOANet(SMALL, seed=4)
        net.cast(np.float64)
        x = _features(rng, batch=1).astype(np.float64)
        sps, probs = net.forward(x)
        r_sps = rng.standard_normal(sps.shape)
        r_probs = rng.standard_normal(probs.shape)

        def loss() -> float:
            s, p = net.forward(x)
            return float(np.sum(s * r_sps) + np.sum(p * r_probs))

        net.forward(x)
        net.backward(r_sps, r_probs)
        grads = {k: v.copy() for k, v in net.gradients().items()}
        eps = 1e-6
        for name, layer, key in net.trainable():
            param = layer.params[key]
            for _ in range(3):
                idx = tuple(int(rng.integers(n)) for n in param.shape)
                old = param[idx]
                param[idx] = old + eps
                up = loss()
                param[idx] = old - eps
                down = loss()
                param[idx] = old
                num = (up - down) / (2 * eps)
                err = abs(num - grads[name][idx]) / max(abs(num) + abs(grads[name][idx]), 1e-8)
                self.assertLess(err, 1e-4, f"{name} {idx}")

    def test_teacher_forcing_cuts_stage_two_gradient(self) -> None:
        rng = np.random.default_rng(7)
        net = DOANet(SMALL)
        x = _features(rng, batch=1)
        sps_in = rng.standard_normal((1, 4, 10)).astype(np.float32)
        sps, probs = net.forward(x, sps_input=sps_in)
        net.backward(np.zeros_like(sps), np.ones_like(probs))
        grads = net.gradients()
        self.assertEqual(float(np.abs(grads["s1.fc_sps.W"]).max()), 0.0)
        self.assertGreater(float(np.abs(grads["s2.fc_doa.W"]).max()), 0.0)

    def test_without_teacher_forcing_stage_one_learns_from_doa(self) -> None:
        rng = np.random.default_rng(8)
        net = DOANet(SMALL)
        sps, probs = net.forward(_features(rng, batch=1))
        net.backward(np.zeros_like(sps), np.ones_like(probs))
        self.assertGreater(float(np.abs(net.gradients()["s1.fc_sps.W"]).max()), 0.0)

    def test_teacher_forced_shape_is_checked(self) -> None:
        net = DOANet(SMALL)
        with self.assertRaises(ValidationError):
            net.forward(_features(np.random.default_rng(9)), sps_input=np.zeros((2, 4, 9)))


if __name__ == "__main__":
    unittest.main()
