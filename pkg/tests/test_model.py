import numpy as np
import pytest

from redline import (
    BatchNormStats,
    LayerSpec,
    NetworkGraph,
    NonFiniteError,
    ShapeError,
    Tensor4,
    count_distinct,
    count_flops,
    count_params,
    forward,
)

from conftest import conv_layer, dense_layer, random_mlp


def identity_dense(n, activation="identity"):
    return LayerSpec(
        "dense",
        Tensor4(np.eye(n, dtype=np.float32).reshape(1, 1, n, n)),
        np.zeros(n, dtype=np.float32),
        activation=activation,
    )


class TestContainers:
    def test_tensor4_rejects_bad_length(self):
        with pytest.raises(ShapeError):
            Tensor4.from_flat(1, 1, 2, 3, [1.0, 2.0])

    def test_tensor4_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            Tensor4.from_flat(1, 1, 1, 2, [np.nan, 1.0])

    def test_tensor4_flat_order(self):
        t = Tensor4.from_flat(1, 1, 2, 3, [1, 2, 3, 4, 5, 6])
        assert t.data[0, 0, 0, 1] == 2
        assert t.data[0, 0, 1, 0] == 4
        assert list(t.flat()) == [1, 2, 3, 4, 5, 6]

    def test_tensor4_immutable(self):
        t = Tensor4.from_flat(1, 1, 1, 2, [1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0, 0, 0, 0] = 5.0

    def test_bias_length_checked(self):
        with pytest.raises(ShapeError):
            LayerSpec(
                "dense", Tensor4.from_flat(1, 1, 2, 3, range(6)), np.zeros(2)
            )

    def test_dense_requires_1x1(self):
        w = Tensor4(np.zeros((3, 3, 1, 1), dtype=np.float32))
        with pytest.raises(ShapeError):
            LayerSpec("dense", w, np.zeros(1))

    def test_bn_std_positive(self):
        with pytest.raises(ValueError):
            BatchNormStats(mean=[0.0], std=[0.0])

    def test_channel_compatibility(self, rng):
        a = dense_layer(2, 3, rng)
        b = dense_layer(4, 2, rng)
        with pytest.raises(ShapeError):
            NetworkGraph((a, b))

    def test_skip_must_point_forward(self, rng):
        a = dense_layer(2, 2, rng)
        b = dense_layer(2, 2, rng)
        with pytest.raises(ValueError):
            NetworkGraph((a, b), skips=frozenset({(1, 0)}))


class TestForward:
    def test_dense_identity(self):
        net = NetworkGraph((identity_dense(2),))
        out = forward(net, np.array([3.0, -1.0]))
        assert np.array_equal(out, np.array([3.0, -1.0], dtype=np.float32))

    def test_relu_clamps(self):
        layer = LayerSpec(
            "dense",
            Tensor4.from_flat(1, 1, 2, 1, [1.0, 1.0]),
            np.zeros(1),
            activation="relu",
        )
        out = forward(NetworkGraph((layer,)), np.array([-2.0, -3.0]))
        assert np.array_equal(out, np.array([0.0], dtype=np.float32))

    def test_conv_all_ones(self):
        layer = LayerSpec(
            "conv2d",
            Tensor4(np.ones((3, 3, 1, 1), dtype=np.float32)),
            np.zeros(1),
            activation="identity",
        )
        out = forward(NetworkGraph((layer,)), np.ones((5, 5, 1), dtype=np.float32))
        assert out.shape == (3, 3, 1)
        assert np.array_equal(out, np.full((3, 3, 1), 9.0, dtype=np.float32))

    def test_deterministic(self, rng):
        net = random_mlp([4, 8, 3], rng)
        x = rng.normal(size=(16, 4)).astype(np.float32)
        a = forward(net, x)
        b = forward(net, x)
        assert np.array_equal(a, b)

    def test_conv1x1_matches_dense_bitwise(self, rng):
        w = rng.normal(size=(1, 1, 3, 5)).astype(np.float32)
        bias = rng.normal(size=5).astype(np.float32)
        dense = LayerSpec("dense", Tensor4(w), bias, activation="identity")
        conv = LayerSpec("conv2d", Tensor4(w), bias, activation="identity")
        x = rng.normal(size=(7, 3)).astype(np.float32)
        out_d = forward(NetworkGraph((dense,)), x)
        out_c = forward(NetworkGraph((conv,)), x.reshape(7, 1, 1, 3))
        assert np.array_equal(out_d, out_c)

    def test_batch_matches_loop(self, rng):
        net = random_mlp([4, 6, 2], rng)
        xs = rng.normal(size=(5, 4)).astype(np.float32)
        batched = forward(net, xs)
        single = np.stack([forward(net, x) for x in xs])
        assert np.array_equal(batched, single)

    def test_bn_affine_applied(self, rng):
        stats = BatchNormStats(mean=[1.0, -1.0], std=[2.0, 4.0])
        layer = LayerSpec(
            "dense",
            Tensor4(np.eye(2, dtype=np.float32).reshape(1, 1, 2, 2)),
            np.zeros(2),
            activation="identity",
            bn=stats,
        )
        out = forward(NetworkGraph((layer,)), np.array([3.0, 3.0]))
        assert np.allclose(out, [(3 - 1) / 2, (3 + 1) / 4])

    def test_skip_add(self, rng):
        a = identity_dense(2, activation="identity")
        b = identity_dense(2, activation="identity")
        c = identity_dense(2, activation="identity")
        net = NetworkGraph((a, b, c), skips=frozenset({(0, 2)}))
        out = forward(net, np.array([1.0, 2.0]))
        assert np.array_equal(out, np.array([2.0, 4.0], dtype=np.float32))

    def test_same_padding_shape(self, rng):
        layer = conv_layer(3, 2, 4, rng, padding="same")
        out = forward(NetworkGraph((layer,)), rng.normal(size=(6, 6, 2)).astype(np.float32))
        assert out.shape == (6, 6, 4)

    def test_stride(self, rng):
        layer = conv_layer(3, 1, 1, rng, stride=2)
        out = forward(NetworkGraph((layer,)), rng.normal(size=(7, 7, 1)).astype(np.float32))
        assert out.shape == (3, 3, 1)

    def test_channel_mismatch_reports_layer(self, rng):
        net = random_mlp([4, 8, 3], rng)
        with pytest.raises(ShapeError, match="layer 0"):
            forward(net, np.zeros(5, dtype=np.float32))

    def test_nonfinite_reports_layer(self):
        big = LayerSpec(
            "dense",
            Tensor4(np.full((1, 1, 1, 1), 3e38, dtype=np.float32)),
            np.zeros(1),
            activation="identity",
        )
        net = NetworkGraph((big, big))
        with pytest.raises(NonFiniteError, match="layer 1"):
            forward(net, np.array([1.0], dtype=np.float32))


class TestAccounting:
    def test_params_dense(self, rng):
        net = NetworkGraph((dense_layer(2, 3, rng),))
        per_layer, total = count_params(net)
        assert per_layer == [6 + 3]
        assert total == 9

    def test_distinct_counts_values(self):
        layer = LayerSpec(
            "dense",
            Tensor4.from_flat(1, 1, 2, 3, [1, 1, 2, 2, 2, 5]),
            np.zeros(3),
        )
        per_layer, total = count_distinct(NetworkGraph((layer,)))
        assert per_layer == [3]
        assert total == 3

    def test_flops_dense(self, rng):
        net = NetworkGraph((dense_layer(10, 5, rng),))
        per_layer, total = count_flops(net, (10,))
        assert per_layer == [50]
        assert total == 50

    def test_flops_conv(self, rng):
        net = NetworkGraph((conv_layer(3, 2, 4, rng),))
        per_layer, total = count_flops(net, (8, 8, 2))
        assert per_layer == [3 * 3 * 2 * 4 * 6 * 6]
        assert total == 2592

    def test_flops_total_is_sum_and_monotone(self, rng):
        net = random_mlp([6, 8, 4, 2], rng)
        per_layer, total = count_flops(net, (6,))
        assert total == sum(per_layer)
        shorter = NetworkGraph(net.layers[:-1])
        _, smaller = count_flops(shorter, (6,))
        assert smaller < total
