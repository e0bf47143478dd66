"""Layer contracts: worked examples, normalization semantics, gradients."""

import numpy as np
import pytest

from braunet.autodiff import Tensor
from braunet.gradcheck import check_gradients
from braunet.nn import (
    BatchNorm2d,
    Conv2d,
    LayerNorm,
    Linear,
    Mlp,
    Module,
    batchnorm2d_forward,
    conv2d_forward,
    count_parameters,
    gelu,
    layernorm_forward,
    linear_forward,
    mlp_forward,
)


def rand_tensor(rng, *shape):
    return Tensor(rng.normal(size=shape), dtype=np.float64, requires_grad=True)


class TestLinear:
    def test_identity_weight(self):
        layer = Linear(3, 3, dtype=np.float64)
        layer.weight.data[...] = np.eye(3)
        layer.bias.data[...] = 0.0
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert np.allclose(linear_forward(x, layer).numpy(), x.numpy())

    def test_hand_computed(self):
        layer = Linear(2, 1, dtype=np.float64)
        layer.weight.data[...] = [[2.0], [3.0]]
        layer.bias.data[...] = [0.5]
        out = linear_forward(Tensor([[1.0, 1.0]]), layer)
        assert out.numpy().tolist() == [[5.5]]

    def test_extent_mismatch(self):
        with pytest.raises(ValueError):
            linear_forward(Tensor(np.zeros((2, 4))), Linear(3, 2))

    def test_gradient(self):
        rng = np.random.default_rng(0)
        layer = Linear(4, 3, rng=rng, dtype=np.float64)
        x = rand_tensor(rng, 5, 4)
        w = Tensor(rng.normal(size=(5, 3)))
        err = check_gradients(lambda: (linear_forward(x, layer) * w).sum(),
                              [x, layer.weight, layer.bias])
        assert err < 1e-4


class TestConv2d:
    def test_tap_counting(self):
        layer = Conv2d(1, 1, 3, padding=1, dtype=np.float64)
        layer.weight.data[...] = 1.0
        layer.bias.data[...] = 0.0
        out = conv2d_forward(Tensor(np.ones((1, 1, 3, 3))), layer).numpy()[0, 0]
        assert out[1, 1] == 9.0
        assert out[0, 0] == 4.0

    def test_depthwise_delta_kernel_is_identity(self):
        layer = Conv2d(3, 3, 3, padding=1, groups=3, dtype=np.float64)
        layer.weight.data[...] = 0.0
        layer.weight.data[:, 0, 1, 1] = 1.0
        layer.bias.data[...] = 0.0
        x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 5, 5)))
        assert np.allclose(conv2d_forward(x, layer).numpy(), x.numpy())

    def test_stride_shape_arithmetic(self):
        layer = Conv2d(1, 1, 3, stride=2, padding=1, dtype=np.float64)
        out = conv2d_forward(Tensor(np.zeros((1, 1, 8, 8))), layer)
        assert out.shape == (1, 1, 4, 4)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv2d_forward(Tensor(np.zeros((1, 2, 4, 4))), Conv2d(3, 1, 3))

    def test_linearity_superposition(self):
        rng = np.random.default_rng(2)
        layer = Conv2d(2, 3, 3, padding=1, rng=rng, dtype=np.float64)
        layer.bias.data[...] = 0.0
        a = np.random.default_rng(3).normal(size=(1, 2, 6, 6))
        b = np.random.default_rng(4).normal(size=(1, 2, 6, 6))
        out_sum = conv2d_forward(Tensor(a + b), layer).numpy()
        outs = conv2d_forward(Tensor(a), layer).numpy() + conv2d_forward(Tensor(b), layer).numpy()
        assert np.allclose(out_sum, outs, atol=1e-12)

    def test_grouped_gradient(self):
        rng = np.random.default_rng(30)
        layer = Conv2d(4, 6, 3, padding=1, groups=2, rng=rng, dtype=np.float64)
        x = rand_tensor(rng, 1, 4, 5, 5)
        w = Tensor(rng.normal(size=(1, 6, 5, 5)))
        err = check_gradients(lambda: (conv2d_forward(x, layer) * w).sum(),
                              [x, layer.weight, layer.bias])
        assert err < 1e-4

    def test_groups_must_divide_channels(self):
        with pytest.raises(ValueError):
            Conv2d(4, 6, 3, groups=3)


class TestGelu:
    def test_zero(self):
        assert gelu(Tensor([0.0], dtype=np.float64)).numpy()[0] == 0.0

    def test_asymptote(self):
        assert gelu(Tensor([10.0], dtype=np.float64)).numpy()[0] == pytest.approx(10.0, abs=1e-6)

    def test_unit_value(self):
        assert gelu(Tensor([1.0], dtype=np.float64)).numpy()[0] == pytest.approx(0.841344746, abs=1e-6)


class TestLayerNorm:
    def test_constant_token_maps_to_zero(self):
        layer = LayerNorm(3, dtype=np.float64)
        out = layernorm_forward(Tensor([[5.0, 5.0, 5.0]]), layer)
        assert np.allclose(out.numpy(), 0.0)

    def test_two_value_token(self):
        layer = LayerNorm(2, dtype=np.float64)
        out = layernorm_forward(Tensor([[1.0, 3.0]]), layer).numpy()
        assert np.allclose(out, [[-1.0, 1.0]], atol=1e-4)

    def test_normalized_statistics(self):
        rng = np.random.default_rng(5)
        layer = LayerNorm(16, dtype=np.float64)
        out = layernorm_forward(Tensor(rng.normal(2.0, 3.0, size=(4, 16))), layer).numpy()
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-5)
        assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)

    def test_invariant_to_per_token_constant(self):
        rng = np.random.default_rng(6)
        layer = LayerNorm(8, dtype=np.float64)
        x = rng.normal(size=(3, 8))
        shifted = x + rng.normal(size=(3, 1))
        a = layernorm_forward(Tensor(x), layer).numpy()
        b = layernorm_forward(Tensor(shifted), layer).numpy()
        assert np.allclose(a, b, atol=1e-5)

    def test_gradient(self):
        rng = np.random.default_rng(7)
        layer = LayerNorm(5, dtype=np.float64)
        x = rand_tensor(rng, 2, 3, 5)
        w = Tensor(rng.normal(size=(2, 3, 5)))
        err = check_gradients(lambda: (layernorm_forward(x, layer) * w).sum(),
                              [x, layer.scale, layer.shift])
        assert err < 1e-4


class TestBatchNorm2d:
    def test_training_normalizes_batch(self):
        layer = BatchNorm2d(2, dtype=np.float64)
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(10.0, 2.0, size=(4, 2, 8, 8)))
        out = batchnorm2d_forward(x, layer, training=True).numpy()
        assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
        assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_eval_with_initial_stats_is_identity(self):
        layer = BatchNorm2d(3, dtype=np.float64)
        x = Tensor(np.random.default_rng(9).normal(size=(2, 3, 4, 4)))
        out = batchnorm2d_forward(x, layer, training=False).numpy()
        assert np.allclose(out, x.numpy(), atol=1e-4)

    def test_momentum_update(self):
        layer = BatchNorm2d(1, momentum=0.1, dtype=np.float64)
        layer.running_mean[...] = 0.0
        x = Tensor(np.full((2, 1, 2, 2), 4.0))
        batchnorm2d_forward(x, layer, training=True)
        assert layer.running_mean[0] == pytest.approx(0.9 * 0.0 + 0.1 * 4.0)

    def test_eval_has_no_batch_coupling(self):
        layer = BatchNorm2d(2, dtype=np.float64)
        layer.running_mean[...] = [1.0, -1.0]
        layer.running_var[...] = [4.0, 0.25]
        rng = np.random.default_rng(10)
        full = rng.normal(size=(4, 2, 3, 3))
        joint = batchnorm2d_forward(Tensor(full), layer, training=False).numpy()
        solo = batchnorm2d_forward(Tensor(full[:1]), layer, training=False).numpy()
        assert np.allclose(joint[:1], solo)

    def test_training_gradient(self):
        rng = np.random.default_rng(11)
        layer = BatchNorm2d(3, dtype=np.float64)
        x = rand_tensor(rng, 2, 3, 4, 4)
        w = Tensor(rng.normal(size=(2, 3, 4, 4)))
        err = check_gradients(
            lambda: (batchnorm2d_forward(x, layer, training=True, update_stats=False) * w).sum(),
            [x, layer.scale, layer.shift],
        )
        assert err < 1e-4


class TestMlp:
    def test_zero_weights_give_zero_output(self):
        mlp = Mlp(4, ratio=3, dtype=np.float64)
        for p in mlp.parameters():
            p.data[...] = 0.0
        out = mlp_forward(Tensor(np.random.default_rng(12).normal(size=(2, 4))), mlp)
        assert np.array_equal(out.numpy(), np.zeros((2, 4)))

    def test_hidden_width_rule(self):
        mlp = Mlp(2, ratio=3)
        assert mlp.fc1.weight.shape == (2, 6)
        assert mlp.fc2.weight.shape == (6, 2)

    def test_end_to_end_gradient(self):
        rng = np.random.default_rng(13)
        mlp = Mlp(3, ratio=2, rng=rng, dtype=np.float64)
        x = rand_tensor(rng, 4, 3)
        w = Tensor(rng.normal(size=(4, 3)))
        err = check_gradients(lambda: (mlp_forward(x, mlp) * w).sum(),
                              [x] + mlp.parameters())
        assert err < 1e-4


class TestModule:
    def test_count_parameters_linear(self):
        assert count_parameters(Linear(2, 3)) == 9

    def test_named_parameters_deterministic(self):
        class Small(Module):
            def __init__(self):
                self.a = Linear(2, 2)
                self.blocks = [Linear(2, 2), Mlp(2, 2)]

        names = [n for n, _ in Small().named_parameters()]
        assert names == [
            "a.weight", "a.bias",
            "blocks.0.weight", "blocks.0.bias",
            "blocks.1.fc1.weight", "blocks.1.fc1.bias",
            "blocks.1.fc2.weight", "blocks.1.fc2.bias",
        ]

    def test_state_dict_round_trip(self):
        src = Mlp(3, 2, rng=np.random.default_rng(14))
        dst = Mlp(3, 2, rng=np.random.default_rng(15))
        dst.load_state_dict(src.state_dict())
        for (_, a), (_, b) in zip(src.named_parameters(), dst.named_parameters()):
            assert np.array_equal(a.data, b.data)

    def test_load_rejects_wrong_names(self):
        mlp = Mlp(3, 2)
        state = mlp.state_dict()
        state["bogus"] = np.zeros(1, dtype=np.float32)
        with pytest.raises(ValueError):
            mlp.load_state_dict(state)
