"""Data-free error bounds for hashed networks.

Two per-weight bounds are combined. The segment bound integrates the weight
density over each partition segment and weighs it by the segment width; the
smoothing bound depends only on the kernel bandwidth. Their minimum feeds a
per-layer bound that accounts for the averaging across a layer's fan-in and
for the fraction of inputs a relu keeps alive (read off the batch-norm
statistics). Layer bounds chain into a whole-network figure by composing the
two-layer inequality left to right, scaling each side by the other factor's
typical output magnitude.

The module also carries the data-free logit-norm estimate used to judge
whether a hashed network's accuracy is at risk, and the tightness metric
comparing the bound against a measured divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hashing import DensityEstimate, HashConfig, HashResult, hash_single_layer
from .model import LayerSpec, NetworkGraph, forward

SMOOTHING_COEFF = (math.sqrt(2.0 / math.pi) + math.sqrt(3.0)) / math.sqrt(
    2.0 * math.pi
)
DEFAULT_CRITERION_THRESHOLD = 1.0 / 3.0
_EPS = 1e-12


class BoundUnavailableError(ValueError):
    """Raised when required statistics are missing instead of defaulting to 0."""


class BoundViolationError(ValueError):
    """Raised when a measured divergence exceeds the claimed bound."""


@dataclass(frozen=True)
class LayerBound:
    """Per-layer error bound pieces.

    ``per_weight`` is the minimum of the two per-weight bounds;
    ``layer_bound`` folds in the fan-in averaging and the relu factor.
    """

    segment_bound: float
    smoothing_bound: float
    per_weight: float
    layer_bound: float
    relu_factor: float

    def __post_init__(self):
        if min(self.segment_bound, self.smoothing_bound, self.per_weight) < 0:
            raise ValueError("bounds must be non-negative")
        if self.layer_bound < 0:
            raise ValueError("layer_bound must be non-negative")
        slack = 1e-12 + 1e-9 * max(self.segment_bound, self.smoothing_bound)
        if self.per_weight > min(self.segment_bound, self.smoothing_bound) + slack:
            raise ValueError("per_weight must not exceed either bound")


@dataclass(frozen=True)
class NetworkBound:
    """Whole-network bound with the accuracy-criterion ingredients."""

    total: float
    per_layer: tuple[LayerBound, ...]
    e_norm: float
    v_norm: float
    criterion_ratio: float

    def __post_init__(self):
        if self.total < 0 or self.criterion_ratio < 0:
            raise ValueError("bound and criterion ratio must be non-negative")


# ---------------------------------------------------------------------------
# per-weight bounds
# ---------------------------------------------------------------------------


def _mass_between(density: DensityEstimate, a: float, b: float) -> float:
    """Trapezoidal density mass over [a, b], interpolating the endpoints."""
    if b <= a:
        return 0.0
    grid, vals = density.grid, density.values
    lo = max(a, grid[0])
    hi = min(b, grid[-1])
    if hi <= lo:
        return 0.0
    inner = grid[(grid > lo) & (grid < hi)]
    xs = np.concatenate(([lo], inner, [hi]))
    ys = np.interp(xs, grid, vals)
    return float(np.trapezoid(ys, xs))


def segment_mass_bound(
    minima: np.ndarray, maxima: np.ndarray, density: DensityEstimate
) -> float:
    """Expected-error bound from segment widths weighted by density mass.

    Segments run between consecutive points of the representatives augmented
    with the support endpoints.
    """
    maxima = np.asarray(maxima, dtype=np.float64).reshape(-1)
    if maxima.size == 0:
        raise ValueError("need at least one representative")
    minima = np.asarray(minima, dtype=np.float64).reshape(-1)
    points = np.concatenate(([minima[0]], maxima, [minima[-1]]))
    total = 0.0
    for a, b in zip(points[:-1], points[1:]):
        total += (b - a) * _mass_between(density, a, b)
    return total


def bandwidth_bound(bandwidth: float) -> float:
    """Per-weight bound that scales linearly with the kernel bandwidth."""
    if bandwidth < 0:
        raise ValueError("bandwidth must be non-negative")
    return SMOOTHING_COEFF * bandwidth


def per_weight_bound(
    minima: np.ndarray, maxima: np.ndarray, density: DensityEstimate
) -> tuple[float, float, float]:
    """(segment bound, smoothing bound, their minimum)."""
    a = segment_mass_bound(minima, maxima, density)
    b = bandwidth_bound(density.bandwidth)
    return a, b, min(a, b)


# ---------------------------------------------------------------------------
# layer and network bounds
# ---------------------------------------------------------------------------


def relu_keep_factor(bn) -> float:
    """1 - erf(-mean / (std * sqrt(2))) with channel-averaged statistics.

    Layers without batch-norm statistics use the identity factor 1.
    """
    if bn is None:
        return 1.0
    mu = float(np.mean(bn.mean))
    sigma = float(np.mean(bn.std))
    return 1.0 - math.erf(-mu / (sigma * math.sqrt(2.0)))


def layer_error_bound(
    per_weight: float, dims: tuple[int, int, int], bn
) -> tuple[float, float]:
    """(layer bound, relu factor) for fan-in dims (kernel_h, kernel_w, c_in)."""
    if per_weight < 0:
        raise ValueError("per-weight bound must be non-negative")
    kh, kw, c_in = dims
    if min(kh, kw, c_in) < 1:
        raise ValueError("dims must be positive")
    factor = relu_keep_factor(bn)
    return per_weight / math.sqrt(kh * kw * c_in) * factor, factor


def layer_bound_from_hash(layer: LayerSpec, result: HashResult) -> LayerBound:
    """Assemble the LayerBound for one hashed layer."""
    if result.degenerate:
        value, factor = layer_error_bound(
            0.0, (layer.kernel_h, layer.kernel_w, layer.c_in), layer.bn
        )
        return LayerBound(0.0, 0.0, 0.0, value, factor)
    if result.density is None:
        raise BoundUnavailableError(
            "hash result carries no density; rerun hashing with keep_density"
        )
    a, b, u = per_weight_bound(result.minima, result.maxima, result.density)
    value, factor = layer_error_bound(
        u, (layer.kernel_h, layer.kernel_w, layer.c_in), layer.bn
    )
    return LayerBound(a, b, u, value, factor)


def operator_scale(layer: LayerSpec) -> float:
    """Typical output magnitude read from batch-norm means; 1 without them."""
    if layer.bn is None:
        return 1.0
    return float(np.mean(np.abs(layer.bn.mean)))


def accumulate_network_bound(
    net: NetworkGraph, per_layer: Sequence[LayerBound]
) -> float:
    """Chain per-layer bounds into the whole-network figure.

    Composing two stages g then f obeys
    ``err(f o g) <= scale(g) * bound(f) + scale(f) * err(g)``;
    the chain applies this left to right, so the result is linear and
    non-decreasing in every per-layer bound and zero when all of them are.
    """
    if len(per_layer) != len(net.layers):
        raise ValueError("need one LayerBound per layer")
    total = 0.0
    prefix_scale = 1.0
    for layer, lb in zip(net.layers, per_layer):
        mu = operator_scale(layer)
        total = prefix_scale * lb.layer_bound + mu * total
        prefix_scale *= mu
    return total


def estimate_logit_norm(net: NetworkGraph) -> tuple[float, float]:
    """Data-free estimate of the expected logit norm and its variance proxy.

    The last batch-norm statistics before the final layer stand in for the
    final layer's input statistics; means propagate through the final
    weights by linearity, variances through the squared weights. Raises
    BoundUnavailableError when no batch-norm layer exists before the output.
    """
    bn_idx = None
    for i in range(len(net.layers) - 1):
        if net.layers[i].bn is not None:
            bn_idx = i
    if bn_idx is None:
        raise BoundUnavailableError(
            "no batch-norm statistics available before the final layer"
        )
    stats = net.layers[bn_idx].bn
    final = net.layers[-1]
    if len(stats) != final.c_in:
        raise BoundUnavailableError(
            "last batch-norm statistics do not match the final layer fan-in"
        )
    w = final.weights.data.astype(np.float64)
    lin = w.sum(axis=(0, 1))  # (c_in, c_out)
    mean_vec = stats.mean.astype(np.float64) @ lin + final.bias.astype(np.float64)
    var_vec = (stats.std.astype(np.float64) ** 2) @ (lin**2)
    if final.bn is not None:
        mean_vec = (mean_vec - final.bn.mean.astype(np.float64)) / final.bn.std.astype(
            np.float64
        )
        var_vec = var_vec / final.bn.std.astype(np.float64) ** 2
    return float(np.linalg.norm(mean_vec)), float(np.linalg.norm(var_vec))


def hashing_criterion(
    u_total: float,
    e_norm: float,
    v_norm: float,
    threshold: float = DEFAULT_CRITERION_THRESHOLD,
) -> str:
    """Judge whether hashing is provably harmless: 'safe' or 'inconclusive'.

    A zero bound is always safe. The bound being an upper bound, a large
    ratio never proves harm, so the negative verdict stays inconclusive.
    """
    if min(u_total, e_norm, v_norm) < 0:
        raise ValueError("inputs must be non-negative")
    if u_total == 0.0:
        return "safe"
    margin = e_norm - v_norm
    if margin <= 0:
        return "inconclusive"
    return "safe" if u_total / margin < threshold else "inconclusive"


def network_bound(
    net: NetworkGraph,
    per_layer: Sequence[LayerBound],
    threshold: float = DEFAULT_CRITERION_THRESHOLD,
) -> NetworkBound:
    """Whole-network bound plus the data-free criterion ingredients."""
    total = accumulate_network_bound(net, per_layer)
    e_norm, v_norm = estimate_logit_norm(net)
    ratio = total / max(e_norm - v_norm, _EPS)
    return NetworkBound(
        total=total,
        per_layer=tuple(per_layer),
        e_norm=e_norm,
        v_norm=v_norm,
        criterion_ratio=ratio,
    )


def analyze_network(
    net: NetworkGraph,
    config: HashConfig | None = None,
    threshold: float = DEFAULT_CRITERION_THRESHOLD,
) -> tuple[NetworkBound, str]:
    """Hash-analyze every layer and produce the bound report inputs.

    Non-prunable layers contribute a zero bound (they are never hashed).
    """
    config = config or HashConfig()
    layer_bounds = []
    for i, layer in enumerate(net.layers):
        if not layer.prunable:
            value, factor = layer_error_bound(
                0.0, (layer.kernel_h, layer.kernel_w, layer.c_in), layer.bn
            )
            layer_bounds.append(LayerBound(0.0, 0.0, 0.0, value, factor))
            continue
        result = hash_single_layer(layer.weights, config, index=i, keep_density=True)
        layer_bounds.append(layer_bound_from_hash(layer, result))
    nb = network_bound(net, layer_bounds, threshold)
    return nb, hashing_criterion(nb.total, nb.e_norm, nb.v_norm, threshold)


# ---------------------------------------------------------------------------
# measured divergence and tightness
# ---------------------------------------------------------------------------


def measure_divergence(net, other, samples: np.ndarray) -> float:
    """Mean L2 distance between the two networks' outputs over a dataset.

    Data-driven helper; the data-free pipeline never calls it.
    """
    a = np.asarray(forward(net, samples), dtype=np.float64)
    b = np.asarray(forward(other, samples), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"output shapes differ: {a.shape} vs {b.shape}")
    flat_a = a.reshape(a.shape[0], -1)
    flat_b = b.reshape(b.shape[0], -1)
    return float(np.linalg.norm(flat_a - flat_b, axis=1).mean())


def tightness(u_total: float, measured: float) -> float:
    """(bound - measured) / bound, in [0, 1]; closer to 0 is tighter."""
    if u_total <= 0:
        raise ValueError("bound must be positive")
    if measured < 0:
        raise ValueError("measured divergence must be non-negative")
    if measured > u_total:
        raise BoundViolationError(
            f"measured divergence {measured} exceeds the bound {u_total}"
        )
    return float(np.clip((u_total - measured) / u_total, 0.0, 1.0))
