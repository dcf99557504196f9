"""Core model containers and the reference forward evaluator.

Weights live in 4-axis blocks laid out as [h][w][c_in][c_out]. Dense layers
are stored with h = w = 1 and evaluated exactly like 1x1 convolutions, so a
single code path covers both kinds. All containers are immutable after
construction and every operation here is a pure function.

Each layer type exposes the same small interface (``pre_activation``,
``param_count``, ``multiplies``, ``weight_values`` plus geometry attributes),
which lets :func:`forward` and the accounting helpers evaluate both dense
graphs and the deduplicated layers produced by the split stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

KINDS = ("dense", "conv2d")
PADDINGS = ("valid", "same")
ACTIVATIONS = ("relu", "identity")


class ShapeError(ValueError):
    """Raised when tensors or inputs are dimensionally incompatible."""


class NonFiniteError(ValueError):
    """Raised when a weight block or an intermediate activation is not finite."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Tensor4:
    """4-axis float32 weight block with axes (h, w, c_in, c_out)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float32)
        if a.ndim != 4:
            raise ShapeError(f"weight block must have 4 axes, got {a.ndim}")
        if not np.isfinite(a).all():
            raise NonFiniteError("weight block contains NaN or Inf")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c_in(self) -> int:
        return self.data.shape[2]

    @property
    def c_out(self) -> int:
        return self.data.shape[3]

    @property
    def size(self) -> int:
        return self.data.size

    def flat(self) -> np.ndarray:
        """Row-major flat view in declared [h][w][c_in][c_out] order."""
        return self.data.reshape(-1)

    @classmethod
    def from_flat(cls, h: int, w: int, c_in: int, c_out: int, values) -> "Tensor4":
        a = np.asarray(values, dtype=np.float32)
        if a.size != h * w * c_in * c_out:
            raise ShapeError(
                f"expected {h * w * c_in * c_out} values for shape "
                f"({h},{w},{c_in},{c_out}), got {a.size}"
            )
        return cls(a.reshape(h, w, c_in, c_out))


@dataclass(frozen=True, eq=False)
class BatchNormStats:
    """Per-output-channel statistics applied as the affine (x - mean) / std."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float32).reshape(-1)
        s = np.asarray(self.std, dtype=np.float32).reshape(-1)
        if m.shape != s.shape:
            raise ShapeError("mean and std must have equal length")
        if not (np.isfinite(m).all() and np.isfinite(s).all()):
            raise NonFiniteError("batch-norm statistics contain NaN or Inf")
        if not (s > 0).all():
            raise ValueError("batch-norm std entries must be positive")
        object.__setattr__(self, "mean", _frozen(m))
        object.__setattr__(self, "std", _frozen(s))

    def __len__(self) -> int:
        return self.mean.shape[0]


def correlate_channel(x_c: np.ndarray, kernel: np.ndarray, stride: int) -> np.ndarray:
    """Spatial correlation of one input channel against (h, w, ...) kernels.

    Kernel taps accumulate in ascending (h, w) order and per-channel partial
    sums are combined in ascending channel order by the callers, so dense and
    split evaluation perform bit-identical float operations.
    """
    kh, kw = kernel.shape[0], kernel.shape[1]
    n, hh, ww = x_c.shape
    out_h = (hh - kh) // stride + 1
    out_w = (ww - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"spatial input {hh}x{ww} smaller than kernel {kh}x{kw}")
    extra = kernel.shape[2:]
    acc = np.zeros((n, out_h, out_w) + extra, dtype=np.float32)
    for dh in range(kh):
        for dw in range(kw):
            patch = x_c[
                :,
                dh : dh + out_h * stride : stride,
                dw : dw + out_w * stride : stride,
            ]
            if extra:
                acc += patch[..., None] * kernel[dh, dw]
            else:
                acc += patch * kernel[dh, dw]
    return acc


def pad_same(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    n, hh, ww, c = x.shape
    out_h = -(-hh // stride)
    out_w = -(-ww // stride)
    pad_h = max((out_h - 1) * stride + kh - hh, 0)
    pad_w = max((out_w - 1) * stride + kw - ww, 0)
    top, left = pad_h // 2, pad_w // 2
    return np.pad(x, ((0, 0), (top, pad_h - top), (left, pad_w - left), (0, 0)))


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    weights: Tensor4
    bias: np.ndarray
    stride: int = 1
    padding: str = "valid"
    activation: str = "relu"
    bn: BatchNormStats | None = None
    prunable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.padding not in PADDINGS:
            raise ValueError(f"unknown padding {self.padding!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.stride < 1:
            raise ValueError("stride must be a positive integer")
        b = np.asarray(self.bias, dtype=np.float32).reshape(-1)
        if b.shape[0] != self.weights.c_out:
            raise ShapeError(f"bias length {b.shape[0]} != c_out {self.weights.c_out}")
        if not np.isfinite(b).all():
            raise NonFiniteError("bias contains NaN or Inf")
        if self.kind == "dense" and (
            self.weights.h != 1 or self.weights.w != 1 or self.stride != 1
        ):
            raise ShapeError("dense layers require h = w = 1 and stride 1")
        if self.bn is not None and len(self.bn) != self.weights.c_out:
            raise ShapeError("batch-norm statistics length != c_out")
        object.__setattr__(self, "bias", _frozen(b))

    @property
    def kernel_h(self) -> int:
        return self.weights.h

    @property
    def kernel_w(self) -> int:
        return self.weights.w

    @property
    def c_in(self) -> int:
        return self.weights.c_in

    @property
    def c_out(self) -> int:
        return self.weights.c_out

    def with_weights(self, weights: Tensor4, bias=None, bn=None) -> "LayerSpec":
        return replace(
            self,
            weights=weights,
            bias=self.bias if bias is None else bias,
            bn=self.bn if bn is None else bn,
        )

    def pre_activation(self, x: np.ndarray) -> np.ndarray:
        """Response on a (N, H, W, C) batch before the activation function."""
        if x.shape[3] != self.c_in:
            raise ShapeError(
                f"input has {x.shape[3]} channels, layer expects {self.c_in}"
            )
        w = self.weights.data
        if self.padding == "same":
            x = pad_same(x, w.shape[0], w.shape[1], self.stride)
        acc = None
        for c in range(self.c_in):
            part = correlate_channel(x[:, :, :, c], w[:, :, c, :], self.stride)
            acc = part if acc is None else acc + part
        acc = acc + self.bias
        if self.bn is not None:
            acc = (acc - self.bn.mean) / self.bn.std
        return acc

    def param_count(self) -> int:
        return self.weights.size + self.bias.size

    def multiplies(self, out_h: int, out_w: int) -> int:
        t = self.weights
        return t.h * t.w * t.c_in * t.c_out * out_h * out_w

    def weight_values(self) -> np.ndarray:
        return self.weights.flat()


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Ordered layer chain with optional residual add edges.

    A skip edge (src, dst) adds the post-activation output of layer ``src``
    to layer ``dst``'s pre-activation sum. Both layers must produce
    shape-identical feature maps and edges must point forward.
    """

    layers: tuple[LayerSpec, ...]
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
        for src, dst in self.skips:
            if not (0 <= src < dst < len(layers)):
                raise ValueError(f"skip edge ({src},{dst}) must point forward")
            if layers[src].c_out != layers[dst].c_out:
                raise ShapeError(
                    f"skip edge ({src},{dst}) connects layers with "
                    f"{layers[src].c_out} vs {layers[dst].c_out} channels"
                )

    def __len__(self) -> int:
        return len(self.layers)

    def skip_touched(self) -> frozenset[int]:
        """Indices of layers participating in any residual add."""
        return frozenset(i for e in self.skips for i in e)


# ---------------------------------------------------------------------------
# forward evaluation
# ---------------------------------------------------------------------------


def _as_batch(x) -> tuple[np.ndarray, bool]:
    """Normalize input to (N, H, W, C); report whether a batch axis was given."""
    a = np.asarray(x, dtype=np.float32)
    if a.ndim == 1:  # flat vector (C,)
        return a.reshape(1, 1, 1, -1), False
    if a.ndim == 2:  # batch of flat vectors (N, C)
        return a.reshape(a.shape[0], 1, 1, a.shape[1]), True
    if a.ndim == 3:  # single image (H, W, C)
        return a[None], False
    if a.ndim == 4:  # batch of images
        return a, True
    raise ShapeError(f"input must have 1 to 4 axes, got {a.ndim}")


def _activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, np.float32(0.0))
    return x


def forward(net, x) -> np.ndarray:
    """Evaluate a network on one input or a batch.

    Accepts flat vectors (C,), single images (H, W, C), or batched versions
    of either. Spatially 1x1 outputs are returned as logit vectors. Works on
    any graph whose layers implement ``pre_activation``, so split networks
    evaluate through the same loop.
    """
    batch, had_batch = _as_batch(x)
    outputs: list[np.ndarray] = []
    incoming: dict[int, list[int]] = {}
    for src, dst in net.skips:
        incoming.setdefault(dst, []).append(src)
    cur = batch
    for i, layer in enumerate(net.layers):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                pre = layer.pre_activation(cur)
        except ShapeError as exc:
            raise ShapeError(f"layer {i}: {exc}") from exc
        for src in sorted(incoming.get(i, ())):
            if outputs[src].shape != pre.shape:
                raise ShapeError(
                    f"skip add ({src},{i}) joins shapes "
                    f"{outputs[src].shape} and {pre.shape}"
                )
            pre = pre + outputs[src]
        cur = _activate(layer.activation, pre)
        if not np.isfinite(cur).all():
            raise NonFiniteError(f"non-finite activation after layer {i}")
        outputs.append(cur)
    if cur.shape[1] == 1 and cur.shape[2] == 1:
        cur = cur.reshape(cur.shape[0], cur.shape[3])
    return cur if had_batch else cur[0]


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------


def count_params(net) -> tuple[list[int], int]:
    """Per-layer and total parameter counts (weights plus bias)."""
    per_layer = [l.param_count() for l in net.layers]
    return per_layer, sum(per_layer)


def distinct_values(values: np.ndarray) -> int:
    """Number of distinct float32 values under exact bit equality."""
    a = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
    return int(np.unique(a.view(np.uint32)).size)


def count_distinct(net) -> tuple[list[int], int]:
    """Per-layer and whole-network distinct weight-value counts."""
    per_layer = [distinct_values(l.weight_values()) for l in net.layers]
    all_w = np.concatenate([l.weight_values() for l in net.layers])
    return per_layer, distinct_values(all_w)


def output_spatial(layer, in_h: int, in_w: int) -> tuple[int, int]:
    kh, kw, s = layer.kernel_h, layer.kernel_w, layer.stride
    if layer.padding == "same":
        return -(-in_h // s), -(-in_w // s)
    out_h = (in_h - kh) // s + 1
    out_w = (in_w - kw) // s + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"spatial input {in_h}x{in_w} smaller than kernel {kh}x{kw}")
    return out_h, out_w


def count_flops(net, input_shape: Sequence[int]) -> tuple[list[int], int]:
    """Per-layer and total multiply counts for the given input shape.

    ``input_shape`` is (H, W, C) or (C,) for flat inputs. A dense-weight
    layer contributes h * w * c_in * c_out multiplies per output position;
    split layers contribute only their deduplicated kernels.
    """
    if len(input_shape) == 1:
        hh, ww = 1, 1
    elif len(input_shape) == 3:
        hh, ww = int(input_shape[0]), int(input_shape[1])
    else:
        raise ShapeError("input_shape must be (H, W, C) or (C,)")
    per_layer = []
    for layer in net.layers:
        out_h, out_w = output_spatial(layer, hh, ww)
        per_layer.append(layer.multiplies(out_h, out_w))
        hh, ww = out_h, out_w
    return per_layer, sum(per_layer)
