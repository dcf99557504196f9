"""Output-wise neuron merging.

Neurons (output slices) of a layer whose signatures are close get replaced
by their barycenter; the successor layer compensates exactly by summing the
input columns of the merged members. With a zero threshold only bit-identical
neurons merge and the evaluated function is preserved up to float
reassociation.

The per-layer merge fraction comes from a scalar knob spread across the
network by one of four schedules; the block schedule is the default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BatchNormStats, LayerSpec, NetworkGraph, Tensor4, forward

STRATEGIES = ("constant", "linear_asc", "linear_desc", "block")


@dataclass(frozen=True)
class MergePlan:
    """Clustering outcome for one layer."""

    layer_index: int
    clusters: tuple[tuple[int, ...], ...]
    threshold_distance: float
    merged_count: int

    def __post_init__(self):
        members = sorted(i for c in self.clusters for i in c)
        if members != list(range(len(members))):
            raise ValueError("clusters must partition the output indices")
        if self.merged_count != len(self.clusters):
            raise ValueError("merged_count must equal the cluster count")


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller root wins so components carry their lowest index
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def neuron_distances(
    weights: Tensor4,
    bias: np.ndarray | None = None,
    bn: BatchNormStats | None = None,
) -> np.ndarray:
    """Pairwise L2 distances between full neuron signatures.

    A signature is the flattened weight slice of one output channel,
    concatenated with its bias and batch-norm entries when given. Comparing
    weights only (the looser notion) is selected by passing neither.
    """
    if weights.c_out < 2:
        raise ValueError("need at least two output channels")
    parts = [weights.data.reshape(-1, weights.c_out).T.astype(np.float64)]
    if bias is not None:
        parts.append(np.asarray(bias, dtype=np.float64).reshape(-1, 1))
    if bn is not None:
        parts.append(bn.mean.astype(np.float64).reshape(-1, 1))
        parts.append(bn.std.astype(np.float64).reshape(-1, 1))
    sig = np.concatenate(parts, axis=1)
    diff = sig[:, None, :] - sig[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def alpha_schedule(alpha: float, depth: int, strategy: str = "block") -> np.ndarray:
    """Spread the scalar merge fraction across ``depth`` layers."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if depth < 1:
        raise ValueError("depth must be positive")
    idx = np.arange(1, depth + 1, dtype=np.float64)
    if strategy == "constant":
        out = np.full(depth, alpha)
    elif strategy == "linear_asc":
        out = alpha * idx / depth
    elif strategy == "linear_desc":
        out = alpha * (depth - idx) / depth
    else:  # block thirds: damped, as-is, boosted
        lo, hi = depth // 3, (2 * depth) // 3
        out = np.empty(depth)
        out[: lo] = max(2.0 * alpha - 1.0, 0.0)
        out[lo:hi] = alpha
        out[hi:] = min(2.0 * alpha, 1.0)
    return out


def cluster_outputs(
    distances: np.ndarray, alpha_l: float
) -> tuple[tuple[tuple[int, ...], ...], float]:
    """Connected components of the similarity graph at the alpha threshold.

    The threshold is the alpha quantile of the strictly positive distances;
    alpha 0 means threshold 0, merging exact duplicates only. Edges join
    pairs closer than the threshold or at distance exactly zero.
    """
    n = distances.shape[0]
    iu = np.triu_indices(n, k=1)
    pair = distances[iu]
    positive = pair[pair > 0]
    if alpha_l <= 0.0 or positive.size == 0:
        threshold = 0.0
    else:
        threshold = float(np.percentile(positive, 100.0 * alpha_l))
    ds = _DisjointSet(n)
    for i, j, d in zip(iu[0], iu[1], pair):
        if d == 0.0 or d < threshold:
            ds.union(int(i), int(j))
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(ds.find(i), []).append(i)
    clusters = tuple(
        tuple(groups[r]) for r in sorted(groups, key=lambda r: min(groups[r]))
    )
    return clusters, threshold


def merge_layer(
    layer: LayerSpec,
    successor: LayerSpec,
    alpha_l: float,
    layer_index: int = 0,
    weights_only: bool = False,
) -> tuple[LayerSpec, LayerSpec, MergePlan]:
    """Merge similar outputs of ``layer`` and compensate in ``successor``.

    Merged weights, bias, and batch-norm entries are per-cluster barycenters;
    the successor's input columns of each cluster's members are summed, so
    exact-duplicate clusters leave the composed function unchanged.

    By default the distance compares the full signature (weights, bias,
    batch-norm); ``weights_only`` selects the looser weight-space distance.
    """
    if weights_only:
        distances = neuron_distances(layer.weights)
    else:
        distances = neuron_distances(layer.weights, layer.bias, layer.bn)
    clusters, threshold = cluster_outputs(distances, alpha_l)
    plan = MergePlan(
        layer_index=layer_index,
        clusters=clusters,
        threshold_distance=threshold,
        merged_count=len(clusters),
    )
    if len(clusters) == layer.c_out:
        return layer, successor, plan

    w = layer.weights.data
    new_w = np.stack(
        [w[:, :, :, list(c)].mean(axis=3) for c in clusters], axis=3
    ).astype(np.float32)
    new_bias = np.asarray(
        [layer.bias[list(c)].mean() for c in clusters], dtype=np.float32
    )
    new_bn = None
    if layer.bn is not None:
        new_bn = BatchNormStats(
            mean=np.asarray(
                [layer.bn.mean[list(c)].mean() for c in clusters], dtype=np.float32
            ),
            std=np.asarray(
                [layer.bn.std[list(c)].mean() for c in clusters], dtype=np.float32
            ),
        )
    merged = layer.with_weights(Tensor4(new_w), bias=new_bias, bn=new_bn)

    sw = successor.weights.data
    new_sw = np.stack(
        [sw[:, :, list(c), :].sum(axis=2) for c in clusters], axis=2
    ).astype(np.float32)
    updated = successor.with_weights(Tensor4(new_sw))
    return merged, updated, plan


def merge_network(
    net: NetworkGraph,
    alpha: float,
    strategy: str = "block",
    weights_only: bool = False,
) -> tuple[NetworkGraph, list[MergePlan | None], list[str]]:
    """Merge layers front to back; the final layer is never merged.

    Layers touched by a residual add, and non-prunable layers, are skipped
    with a note (their output width is pinned by the graph). Returns the
    merged network, per-layer plans (None where skipped), and the notes.
    """
    depth = len(net.layers)
    alphas = alpha_schedule(alpha, depth, strategy)
    excluded = net.skip_touched()
    layers = list(net.layers)
    plans: list[MergePlan | None] = [None] * depth
    notes: list[str] = []
    for i in range(depth - 1):
        if i in excluded:
            notes.append(f"layer {i}: skipped (residual add pins its outputs)")
            continue
        if not layers[i].prunable:
            notes.append(f"layer {i}: skipped (marked non-prunable)")
            continue
        merged, updated, plan = merge_layer(
            layers[i],
            layers[i + 1],
            float(alphas[i]),
            layer_index=i,
            weights_only=weights_only,
        )
        layers[i] = merged
        layers[i + 1] = updated
        plans[i] = plan
    return NetworkGraph(tuple(layers), net.skips), plans, notes


# ---------------------------------------------------------------------------
# data-driven threshold calibration
# ---------------------------------------------------------------------------


def accuracy(net, samples: np.ndarray, labels: np.ndarray) -> float:
    logits = forward(net, samples)
    if logits.ndim != 2:
        logits = logits.reshape(logits.shape[0], -1)
    return float((logits.argmax(axis=1) == np.asarray(labels)).mean())


def calibrate_alpha(
    net: NetworkGraph,
    samples: np.ndarray,
    labels: np.ndarray,
    accuracy_tolerance: float,
    strategy: str = "block",
) -> float:
    """Largest merge fraction whose accuracy stays within the tolerance.

    Coarse 0.05 grid, refined by bisection to a 0.01 resolution, then a final
    upward walk so that the returned value passes while value + 0.01 fails
    or exceeds 1. Data-driven; excluded from data-free pipelines.
    """
    if np.asarray(samples).shape[0] == 0:
        raise ValueError("empty calibration dataset")
    baseline = accuracy(net, samples, labels)

    def passes(hundredths: int) -> bool:
        merged, _, _ = merge_network(net, hundredths / 100.0, strategy)
        return accuracy(merged, samples, labels) >= baseline - accuracy_tolerance

    lo, hi = 0, None
    for grid in range(0, 101, 5):
        if passes(grid):
            lo = grid
        else:
            hi = grid
            break
    if hi is None:
        return 1.0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if passes(mid):
            lo = mid
        else:
            hi = mid
    while lo + 1 <= 100 and passes(lo + 1):
        lo += 1
    return lo / 100.0
