import numpy as np
import pytest

from redline import (
    BatchNormStats,
    LayerSpec,
    NetworkGraph,
    Tensor4,
    alpha_schedule,
    calibrate_alpha,
    forward,
    merge_layer,
    merge_network,
    neuron_distances,
)
from redline.merge import accuracy

from conftest import dense_layer, nets_allclose, random_mlp


def planted_duplicate_net(rng):
    """Two-layer net whose first layer carries bit-identical neurons."""
    w = rng.normal(size=(1, 1, 2, 4)).astype(np.float32)
    w[:, :, :, 1] = w[:, :, :, 0]
    bias = rng.normal(size=4).astype(np.float32)
    bias[1] = bias[0]
    first = LayerSpec("dense", Tensor4(w), bias, activation="relu")
    second = dense_layer(4, 3, rng, activation="identity")
    return NetworkGraph((first, second))


class TestDistances:
    def test_identical_neurons_zero(self, rng):
        w = rng.normal(size=(1, 1, 3, 2)).astype(np.float32)
        w[:, :, :, 1] = w[:, :, :, 0]
        d = neuron_distances(Tensor4(w), np.zeros(2, dtype=np.float32))
        assert d[0, 1] == 0.0

    def test_orthonormal_columns(self):
        w = Tensor4.from_flat(1, 1, 2, 2, [1.0, 0.0, 0.0, 1.0])
        d = neuron_distances(w, np.zeros(2, dtype=np.float32))
        assert d[0, 1] == pytest.approx(np.sqrt(2.0))

    def test_matrix_shape_properties(self, rng):
        w = Tensor4(rng.normal(size=(2, 2, 3, 5)).astype(np.float32))
        d = neuron_distances(w)
        assert d.shape == (5, 5)
        assert np.allclose(d, d.T)
        assert np.allclose(np.diag(d), 0.0)
        assert (d >= 0).all()

    def test_bias_included_in_signature(self, rng):
        w = rng.normal(size=(1, 1, 2, 2)).astype(np.float32)
        w[:, :, :, 1] = w[:, :, :, 0]
        d = neuron_distances(Tensor4(w), np.array([0.0, 3.0], dtype=np.float32))
        assert d[0, 1] == pytest.approx(3.0)

    def test_weights_only_mode_ignores_bias(self, rng):
        w = rng.normal(size=(1, 1, 2, 3)).astype(np.float32)
        w[:, :, :, 1] = w[:, :, :, 0]
        first = LayerSpec(
            "dense", Tensor4(w), np.array([0.0, 3.0, 1.0], dtype=np.float32)
        )
        second = dense_layer(3, 2, rng)
        _, _, strict = merge_layer(first, second, 0.0)
        _, _, loose = merge_layer(first, second, 0.0, weights_only=True)
        assert strict.merged_count == 3
        assert loose.merged_count == 2


class TestAlphaSchedule:
    def test_zero_everywhere(self):
        for strategy in ("constant", "linear_asc", "linear_desc", "block"):
            assert np.array_equal(alpha_schedule(0.0, 7, strategy), np.zeros(7))

    def test_block_thirds(self):
        out = alpha_schedule(0.4, 9, "block")
        assert np.allclose(out, [0, 0, 0, 0.4, 0.4, 0.4, 0.8, 0.8, 0.8])

    def test_linear_ascending(self):
        assert np.allclose(
            alpha_schedule(0.5, 4, "linear_asc"), [0.125, 0.25, 0.375, 0.5]
        )

    def test_linear_descending(self):
        assert np.allclose(
            alpha_schedule(0.5, 4, "linear_desc"), [0.375, 0.25, 0.125, 0.0]
        )

    def test_block_saturation(self):
        out = alpha_schedule(0.8, 3, "block")
        assert np.allclose(out, [0.6, 0.8, 1.0])


class TestMergeLayer:
    def test_exact_duplicates_pattern(self, rng):
        first = LayerSpec(
            "dense",
            Tensor4.from_flat(1, 1, 2, 3, [1, 1, 3, 2, 2, 4]),
            np.zeros(3),
            activation="relu",
        )
        second = dense_layer(3, 2, rng)
        merged, updated, plan = merge_layer(first, second, 0.0)
        assert plan.clusters == ((0, 1), (2,))
        assert merged.c_out == 2
        assert np.array_equal(
            merged.weights.data[0, 0, :, 0], np.array([1.0, 2.0], dtype=np.float32)
        )
        expected = second.weights.data[:, :, 0, :] + second.weights.data[:, :, 1, :]
        assert np.allclose(updated.weights.data[:, :, 0, :], expected)
        assert np.array_equal(
            updated.weights.data[:, :, 1, :], second.weights.data[:, :, 2, :]
        )

    def test_alpha_zero_distinct_identity(self, rng):
        first = dense_layer(3, 4, rng)
        second = dense_layer(4, 2, rng)
        merged, updated, plan = merge_layer(first, second, 0.0)
        assert plan.merged_count == 4
        assert merged is first and updated is second

    def test_threshold_picks_near_pair(self):
        eps = 1e-3
        first = LayerSpec(
            "dense",
            Tensor4.from_flat(1, 1, 1, 3, [0.0, eps, 10.0]),
            np.zeros(3),
            activation="identity",
        )
        second = LayerSpec(
            "dense",
            Tensor4.from_flat(1, 1, 3, 1, [1.0, 1.0, 1.0]),
            np.zeros(1),
            activation="identity",
        )
        merged, _, plan = merge_layer(first, second, 0.5)
        assert plan.clusters == ((0, 1), (2,))
        assert merged.weights.data[0, 0, 0, 0] == pytest.approx(eps / 2)

    def test_bn_barycenter(self, rng):
        w = rng.normal(size=(1, 1, 2, 2)).astype(np.float32)
        w[:, :, :, 1] = w[:, :, :, 0]
        bn = BatchNormStats(mean=[1.0, 3.0], std=[1.0, 2.0])
        first = LayerSpec("dense", Tensor4(w), np.zeros(2), bn=bn)
        second = dense_layer(2, 2, rng)
        merged, _, plan = merge_layer(first, second, 1.0)
        if plan.merged_count == 1:
            assert merged.bn.mean[0] == pytest.approx(2.0)
            assert merged.bn.std[0] == pytest.approx(1.5)


class TestMergeNetwork:
    def test_random_net_untouched_at_alpha_zero(self, rng):
        net = random_mlp([5, 8, 6, 3], rng)
        merged, plans, notes = merge_network(net, 0.0)
        assert nets_allclose(net, merged)
        assert notes == []
        for i, plan in enumerate(plans[:-1]):
            assert plan.merged_count == net.layers[i].c_out
        assert plans[-1] is None

    def test_planted_duplicates_merge_and_preserve(self, rng):
        net = planted_duplicate_net(rng)
        merged, plans, _ = merge_network(net, 0.0)
        assert merged.layers[0].c_out == 3
        assert plans[0].merged_count == 3
        x = rng.normal(size=(100, 2)).astype(np.float32)
        assert np.abs(forward(net, x) - forward(merged, x)).max() <= 1e-5

    def test_idempotent_at_alpha_zero(self, rng):
        net = planted_duplicate_net(rng)
        once, _, _ = merge_network(net, 0.0)
        twice, _, _ = merge_network(once, 0.0)
        assert nets_allclose(once, twice)

    def test_final_layer_never_merged(self, rng):
        w = rng.normal(size=(1, 1, 3, 4)).astype(np.float32)
        w[:, :, :, 1] = w[:, :, :, 0]
        final = LayerSpec("dense", Tensor4(w), np.zeros(4), activation="identity")
        net = NetworkGraph((dense_layer(2, 3, rng), final))
        merged, plans, _ = merge_network(net, 0.0)
        assert merged.layers[1].c_out == 4
        assert plans[1] is None

    def test_skip_touched_layers_excluded(self, rng):
        w = rng.normal(size=(1, 1, 4, 4)).astype(np.float32)
        w[:, :, :, 1] = w[:, :, :, 0]
        dup = LayerSpec("dense", Tensor4(w), np.zeros(4))
        layers = (dup, dense_layer(4, 4, rng), dense_layer(4, 2, rng))
        net = NetworkGraph(layers, skips=frozenset({(0, 1)}))
        merged, plans, notes = merge_network(net, 0.0)
        assert plans[0] is None
        assert any("residual" in n for n in notes)
        assert merged.layers[0].c_out == 4

    def test_permutation_equivariance(self, rng):
        net = planted_duplicate_net(rng)
        perm = np.array([2, 0, 3, 1])
        first, second = net.layers
        p_first = first.with_weights(
            Tensor4(first.weights.data[:, :, :, perm]), bias=first.bias[perm]
        )
        p_second = second.with_weights(Tensor4(second.weights.data[:, :, perm, :]))
        p_net = NetworkGraph((p_first, p_second))
        merged, _, _ = merge_network(net, 0.0)
        p_merged, _, _ = merge_network(p_net, 0.0)
        assert merged.layers[0].c_out == p_merged.layers[0].c_out
        x = rng.normal(size=(50, 2)).astype(np.float32)
        assert np.abs(forward(merged, x) - forward(p_merged, x)).max() <= 1e-5


class TestCalibrateAlpha:
    def make_eval_net(self, rng):
        net = random_mlp([4, 12, 8, 3], rng, last_identity=True)
        samples = rng.normal(size=(64, 4)).astype(np.float32)
        labels = forward(net, samples).argmax(axis=1)
        return net, samples, labels

    def test_full_tolerance_accepts_everything(self, rng):
        net, samples, labels = self.make_eval_net(rng)
        assert calibrate_alpha(net, samples, labels, 1.0) == 1.0

    def test_zero_when_any_merging_flips(self, rng):
        net, samples, labels = self.make_eval_net(rng)
        alpha = calibrate_alpha(net, samples, labels, 0.0, strategy="constant")
        merged, _, _ = merge_network(net, alpha, "constant")
        assert accuracy(merged, samples, labels) == accuracy(net, samples, labels)

    def test_monotone_guarantee(self, rng):
        net, samples, labels = self.make_eval_net(rng)
        tol = 0.25
        alpha = calibrate_alpha(net, samples, labels, tol, strategy="constant")
        baseline = accuracy(net, samples, labels)
        merged, _, _ = merge_network(net, alpha, "constant")
        assert accuracy(merged, samples, labels) >= baseline - tol
        nxt = alpha + 0.01
        if nxt <= 1.0:
            bumped, _, _ = merge_network(net, nxt, "constant")
            assert accuracy(bumped, samples, labels) < baseline - tol

    def test_empty_dataset_rejected(self, rng):
        net = random_mlp([3, 3], rng)
        with pytest.raises(ValueError):
            calibrate_alpha(net, np.zeros((0, 3), dtype=np.float32), np.zeros(0), 0.1)
