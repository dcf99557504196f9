"""Shared builders for synthetic networks and structured weight sets."""

from __future__ import annotations

import numpy as np
import pytest

from redline import BatchNormStats, LayerSpec, NetworkGraph, Tensor4


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def dense_layer(
    c_in: int,
    c_out: int,
    rng: np.random.Generator,
    activation: str = "relu",
    bn: bool = False,
    scale: float = 1.0,
) -> LayerSpec:
    w = Tensor4(rng.normal(0.0, scale, size=(1, 1, c_in, c_out)).astype(np.float32))
    bias = rng.normal(0.0, 0.1, size=c_out).astype(np.float32)
    stats = None
    if bn:
        stats = BatchNormStats(
            mean=rng.normal(0.0, 1.0, size=c_out).astype(np.float32),
            std=rng.uniform(0.5, 2.0, size=c_out).astype(np.float32),
        )
    return LayerSpec("dense", w, bias, activation=activation, bn=stats)


def conv_layer(
    kernel: int,
    c_in: int,
    c_out: int,
    rng: np.random.Generator,
    activation: str = "relu",
    padding: str = "valid",
    stride: int = 1,
    bn: bool = False,
) -> LayerSpec:
    w = Tensor4(
        rng.normal(0.0, 1.0, size=(kernel, kernel, c_in, c_out)).astype(np.float32)
    )
    bias = rng.normal(0.0, 0.1, size=c_out).astype(np.float32)
    stats = None
    if bn:
        stats = BatchNormStats(
            mean=rng.normal(0.0, 1.0, size=c_out).astype(np.float32),
            std=rng.uniform(0.5, 2.0, size=c_out).astype(np.float32),
        )
    return LayerSpec(
        "conv2d",
        w,
        bias,
        stride=stride,
        padding=padding,
        activation=activation,
        bn=stats,
    )


def random_mlp(
    widths: list[int],
    rng: np.random.Generator,
    bn: bool = False,
    last_identity: bool = True,
) -> NetworkGraph:
    layers = []
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        layers.append(
            dense_layer(
                widths[i],
                widths[i + 1],
                rng,
                activation="identity" if (last and last_identity) else "relu",
                bn=bn and not last,
            )
        )
    return NetworkGraph(tuple(layers))


def mixture_weights(
    rng: np.random.Generator,
    count: int,
    centers,
    sigma: float,
    probs=None,
) -> np.ndarray:
    centers = np.asarray(centers, dtype=np.float64)
    which = rng.choice(centers.size, size=count, p=probs)
    return (centers[which] + rng.normal(0.0, sigma, size=count)).astype(np.float32)


def mode_weights(
    rng: np.random.Generator, count: int, values
) -> np.ndarray:
    """Weights drawn iid uniform over a fixed set of exact values."""
    values = np.asarray(values, dtype=np.float32)
    return values[rng.integers(0, values.size, size=count)]


def synthetic_bn_mlp(seed: int, width: int = 6, depth: int = 3):
    """MLP family with synthetic batch-norm statistics.

    Weights come from well-separated Gaussian mixtures hashed at a
    mode-scale bandwidth; statistics are drawn so the chained error bound
    is non-vacuous. Returns (net, hashed net, per-layer bounds).
    """
    from redline import HashConfig
    from redline.bounds import layer_bound_from_hash
    from redline.hashing import hash_single_layer

    r = np.random.default_rng(seed)
    layers, results = [], []
    for li in range(depth):
        k = int(r.integers(1, 4))
        sigma = float(r.uniform(0.02, 0.08))
        centers = np.cumsum(r.uniform(10, 20, size=k)) * sigma
        centers -= centers.mean()
        n = width * width
        vals = (centers[r.integers(0, k, n)] + r.normal(0, sigma, n)).astype(
            np.float32
        )
        bw = sigma * float(r.uniform(1.0, 1.4))
        bn = BatchNormStats(
            mean=r.normal(0.0, 2.0, size=width).astype(np.float32),
            std=r.uniform(3.0, 5.0, size=width).astype(np.float32),
        )
        layer = LayerSpec(
            "dense",
            Tensor4(vals.reshape(1, 1, width, width)),
            r.normal(0, 0.1, width).astype(np.float32),
            activation="relu" if li < depth - 1 else "identity",
            bn=bn,
        )
        results.append(
            hash_single_layer(layer.weights, HashConfig(bandwidth=bw), keep_density=True)
        )
        layers.append(layer)
    net = NetworkGraph(tuple(layers))
    hashed = NetworkGraph(
        tuple(l.with_weights(res.hashed) for l, res in zip(layers, results))
    )
    bounds = [layer_bound_from_hash(l, res) for l, res in zip(layers, results)]
    return net, hashed, bounds


def nets_allclose(a, b, atol: float = 0.0) -> bool:
    if len(a.layers) != len(b.layers) or a.skips != b.skips:
        return False
    for la, lb in zip(a.layers, b.layers):
        if la.weights.data.shape != lb.weights.data.shape:
            return False
        if atol == 0.0:
            if not (
                np.array_equal(la.weights.data, lb.weights.data)
                and np.array_equal(la.bias, lb.bias)
            ):
                return False
        else:
            if not (
                np.allclose(la.weights.data, lb.weights.data, atol=atol)
                and np.allclose(la.bias, lb.bias, atol=atol)
            ):
                return False
    return True
