"""Input-wise layer splitting.

A layer is decomposed per input channel (the singleton partition of its
inputs). Within each channel, per-output kernels that are bit-identical are
stored once; an integer duplication map scatters each computed partial
result to every output position that needs it. The decomposition never
changes the evaluated function, only the number of operations.

Kernel equality is exact bit equality. Hashed layers carry exact mode
constants, so no tolerance is needed, and a tolerance would silently change
the function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Iterator

import numpy as np

from ._parallel import thread_map
from .model import (
    BatchNormStats,
    LayerSpec,
    NetworkGraph,
    NonFiniteError,
    ShapeError,
    Tensor4,
    _frozen,
    correlate_channel,
    forward,
    output_spatial,
    pad_same,
)


@dataclass(frozen=True, eq=False)
class SplitLayer:
    """A layer stored as per-input-channel unique kernels plus duplication maps.

    ``unique_kernels[c]`` holds the distinct (h, w) kernel blocks seen at
    input channel ``c`` in first-occurrence order; ``dup[c][j]`` indexes the
    block reproducing the original kernel of output ``j``. Bias and
    batch-norm statistics carry through unchanged.
    """

    kind: str
    unique_kernels: tuple[np.ndarray, ...]
    dup: tuple[np.ndarray, ...]
    bias: np.ndarray
    c_out: int
    stride: int = 1
    padding: str = "valid"
    activation: str = "relu"
    bn: BatchNormStats | None = None
    prunable: bool = True

    def __post_init__(self):
        if len(self.unique_kernels) != len(self.dup):
            raise ShapeError("unique_kernels and dup must align per channel")
        if not self.unique_kernels:
            raise ShapeError("split layer needs at least one input channel")
        kh, kw = self.unique_kernels[0].shape[1:3]
        uniq = []
        dups = []
        for c, (u, d) in enumerate(zip(self.unique_kernels, self.dup)):
            u = np.asarray(u, dtype=np.float32)
            d = np.asarray(d, dtype=np.int64).reshape(-1)
            if u.ndim != 3 or u.shape[1:] != (kh, kw):
                raise ShapeError(f"channel {c}: kernels must share shape ({kh},{kw})")
            if not np.isfinite(u).all():
                raise NonFiniteError(f"channel {c}: kernels contain NaN or Inf")
            if d.shape[0] != self.c_out:
                raise ShapeError(f"channel {c}: dup map length != c_out")
            if d.min() < 0 or d.max() >= u.shape[0]:
                raise ShapeError(f"channel {c}: dup index out of range")
            uniq.append(_frozen(u))
            dups.append(_frozen(d))
        object.__setattr__(self, "unique_kernels", tuple(uniq))
        object.__setattr__(self, "dup", tuple(dups))
        b = np.asarray(self.bias, dtype=np.float32).reshape(-1)
        if b.shape[0] != self.c_out:
            raise ShapeError("bias length != c_out")
        object.__setattr__(self, "bias", _frozen(b))

    @property
    def kernel_h(self) -> int:
        return self.unique_kernels[0].shape[1]

    @property
    def kernel_w(self) -> int:
        return self.unique_kernels[0].shape[2]

    @property
    def c_in(self) -> int:
        return len(self.unique_kernels)

    def unique_counts(self) -> list[int]:
        return [u.shape[0] for u in self.unique_kernels]

    def remaining_ops(self) -> int:
        return sum(self.unique_counts())

    def to_dense(self) -> Tensor4:
        """Reconstruct the original weight block (bit-exact)."""
        kh, kw = self.kernel_h, self.kernel_w
        w = np.empty((kh, kw, self.c_in, self.c_out), dtype=np.float32)
        for c in range(self.c_in):
            w[:, :, c, :] = np.moveaxis(self.unique_kernels[c][self.dup[c]], 0, -1)
        return Tensor4(w)

    def pre_activation(self, x: np.ndarray) -> np.ndarray:
        """Response on a (N, H, W, C) batch before the activation function.

        Each unique kernel is evaluated once per channel; results are
        scattered through the duplication map and accumulated in ascending
        channel order, matching the dense evaluation order bit for bit.
        """
        if x.shape[3] != self.c_in:
            raise ShapeError(
                f"input has {x.shape[3]} channels, layer expects {self.c_in}"
            )
        if self.padding == "same":
            x = pad_same(x, self.kernel_h, self.kernel_w, self.stride)
        acc = None
        for c in range(self.c_in):
            parts = correlate_channel(
                x[:, :, :, c],
                np.moveaxis(self.unique_kernels[c], 0, -1),
                self.stride,
            )
            full = parts[..., self.dup[c]]
            acc = full if acc is None else acc + full
        acc = acc + self.bias
        if self.bn is not None:
            acc = (acc - self.bn.mean) / self.bn.std
        return acc

    def param_count(self) -> int:
        kh, kw = self.kernel_h, self.kernel_w
        return self.remaining_ops() * kh * kw + self.bias.size

    def multiplies(self, out_h: int, out_w: int) -> int:
        kh, kw = self.kernel_h, self.kernel_w
        return self.remaining_ops() * kh * kw * out_h * out_w

    def weight_values(self) -> np.ndarray:
        return np.concatenate([u.reshape(-1) for u in self.unique_kernels])


@dataclass(frozen=True, eq=False)
class SplitNetwork:
    """Layer chain mixing dense and split layers; same skip semantics."""

    layers: tuple
    skips: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(
            self, "skips", frozenset((int(s), int(d)) for s, d in self.skips)
        )
        for i in range(len(layers) - 1):
            if layers[i + 1].c_in != layers[i].c_out:
                raise ShapeError(
                    f"layer {i + 1} expects c_in {layers[i + 1].c_in} but layer "
                    f"{i} produces {layers[i].c_out} channels"
                )

    def __len__(self) -> int:
        return len(self.layers)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def dedup_kernels(
    weights: Tensor4,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-channel (unique kernels, duplication map) under exact bit equality."""
    uniq: list[np.ndarray] = []
    dup: list[np.ndarray] = []
    data = weights.data
    for c in range(weights.c_in):
        seen: dict[bytes, int] = {}
        kernels: list[np.ndarray] = []
        indices = np.empty(weights.c_out, dtype=np.int64)
        for j in range(weights.c_out):
            k = np.ascontiguousarray(data[:, :, c, j])
            key = k.tobytes()
            idx = seen.get(key)
            if idx is None:
                idx = len(kernels)
                seen[key] = idx
                kernels.append(k)
            indices[j] = idx
        uniq.append(np.stack(kernels))
        dup.append(indices)
    return uniq, dup


def split_layer(layer: LayerSpec) -> SplitLayer:
    """Split one layer into its singleton input decomposition."""
    uniq, dup = dedup_kernels(layer.weights)
    return SplitLayer(
        kind=layer.kind,
        unique_kernels=tuple(uniq),
        dup=tuple(dup),
        bias=layer.bias,
        c_out=layer.c_out,
        stride=layer.stride,
        padding=layer.padding,
        activation=layer.activation,
        bn=layer.bn,
        prunable=layer.prunable,
    )


def split_forward(net: SplitNetwork, x) -> np.ndarray:
    """Evaluate a split network; identical semantics to the dense forward."""
    return forward(net, x)


def op_count(
    layer: SplitLayer, input_spatial_shape: tuple[int, int] | None = None
) -> tuple[int, int, float]:
    """(remaining_ops, original_ops, pruning_ratio) for one split layer.

    Ops are per-channel kernel applications. With an input spatial shape the
    counts scale by the number of output positions, which leaves the ratio
    unchanged.
    """
    remaining = layer.remaining_ops()
    original = layer.c_in * layer.c_out
    if input_spatial_shape is not None:
        out_h, out_w = output_spatial(
            layer, int(input_spatial_shape[0]), int(input_spatial_shape[1])
        )
        remaining *= out_h * out_w
        original *= out_h * out_w
    return remaining, original, 1.0 - remaining / original


def split_network(net: NetworkGraph) -> tuple[SplitNetwork, list[dict]]:
    """Split every prunable layer; non-prunable layers stay dense.

    Returns the split network and one op report per layer with keys
    (layer, split, remaining_ops, original_ops, pruning_ratio). Layers are
    independent, so the work fans out across threads when configured.
    """

    def run(item):
        i, layer = item
        if not layer.prunable:
            original = layer.c_in * layer.c_out
            return layer, {
                "layer": i,
                "split": False,
                "remaining_ops": original,
                "original_ops": original,
                "pruning_ratio": 0.0,
            }
        try:
            sl = split_layer(layer)
        except (ShapeError, ValueError) as exc:
            raise type(exc)(f"layer {i}: {exc}") from exc
        remaining, original, ratio = op_count(sl)
        return sl, {
            "layer": i,
            "split": True,
            "remaining_ops": remaining,
            "original_ops": original,
            "pruning_ratio": ratio,
        }

    results = thread_map(run, list(enumerate(net.layers)))
    out_layers = tuple(layer for layer, _ in results)
    reports = [report for _, report in results]
    return SplitNetwork(out_layers, net.skips), reports


# ---------------------------------------------------------------------------
# optimality oracle
# ---------------------------------------------------------------------------


def bell_number(n: int) -> int:
    """Number of set partitions of an n-element set, exactly."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > 25:
        raise OverflowError("bell_number restricted to n <= 25")
    bells = [1]
    for m in range(1, n + 1):
        bells.append(sum(comb(m - 1, k) * bells[k] for k in range(m)))
    return bells[n]


def set_partitions(items: list[int]) -> Iterator[list[list[int]]]:
    """All partitions of ``items`` into non-empty blocks."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partial in set_partitions(rest):
        for i in range(len(partial)):
            yield partial[:i] + [[first] + partial[i]] + partial[i + 1 :]
        yield [[first]] + partial


def partition_bruteforce(weights: Tensor4) -> int:
    """Minimum op count over all input partitions, by exhaustive search.

    For a partition block C, outputs collapse when their stacked kernels
    agree on every channel of C; each surviving class costs one kernel
    application per channel of C.
    """
    c_in = weights.c_in
    if c_in > 8:
        raise ValueError("brute force restricted to c_in <= 8")
    data = weights.data
    best = None
    for partition in set_partitions(list(range(c_in))):
        total = 0
        for block in partition:
            stacked = {
                np.ascontiguousarray(data[:, :, block, j]).tobytes()
                for j in range(weights.c_out)
            }
            total += len(block) * len(stacked)
        best = total if best is None else min(best, total)
    return int(best)
