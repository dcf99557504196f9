"""Adaptive density-based weight hashing.

Per layer, a Gaussian kernel density estimate of the weight values is
evaluated on a uniform grid. Local maxima of the density become the
representative values; local minima (plus the grid endpoints) partition the
support, and every weight maps to the representative of its cell. A uniform
256-level quantizer is included as the baseline scheme.

The bandwidth controls the trade-off: wider kernels merge nearby structure
and leave fewer representatives, at the price of a larger per-weight error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import NetworkGraph, NonFiniteError, Tensor4, _frozen, distinct_values
from ._parallel import thread_map

DEFAULT_GRID_SIZE = 2048
DEFAULT_SUBSAMPLE_THRESHOLD = 1_000_000
DEFAULT_SUBSAMPLE_SIZE = 50_000
_KDE_CHUNK = 2048


class DegenerateLayerError(ValueError):
    """Raised when a layer has fewer than two distinct weight values."""


class OutOfSupportError(ValueError):
    """Raised when a value falls outside the hashing partition's support."""


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Density values on a strictly ascending grid."""

    grid: np.ndarray
    values: np.ndarray
    bandwidth: float
    sample_count: int

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64).reshape(-1)
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if g.shape != v.shape:
            raise ValueError("grid and values must have equal length")
        if g.size < 2 or not (np.diff(g) > 0).all():
            raise ValueError("grid must be strictly ascending with >= 2 points")
        if (v < 0).any():
            raise ValueError("density values must be non-negative")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "grid", _frozen(g))
        object.__setattr__(self, "values", _frozen(v))

    def mass(self) -> float:
        """Trapezoidal integral of the density over the grid."""
        return float(np.trapezoid(self.values, self.grid))

    def heights_at(self, positions: np.ndarray) -> np.ndarray:
        return np.interp(positions, self.grid, self.values)


@dataclass(frozen=True, eq=False)
class HashResult:
    """Per-layer hashing outcome.

    ``minima`` includes both support endpoints and interleaves strictly with
    ``maxima`` (one more minimum than maxima). Degenerate layers (a single
    distinct value) carry that value as their only representative and skip
    the interleaving invariant.
    """

    minima: np.ndarray
    maxima: np.ndarray
    bandwidth: float
    hashed: Tensor4
    distinct_before: int
    distinct_after: int
    degenerate: bool = False
    density: DensityEstimate | None = None

    def __post_init__(self):
        mn = np.asarray(self.minima, dtype=np.float64).reshape(-1)
        mx = np.asarray(self.maxima, dtype=np.float64).reshape(-1)
        if not self.degenerate:
            _check_interleaved(mn, mx)
            codomain = mx.astype(np.float32)
            if not np.isin(self.hashed.flat(), codomain).all():
                raise ValueError("hashed values escape the representative set")
        if self.distinct_after > max(len(mx), 1):
            raise ValueError("distinct_after exceeds the representative count")
        object.__setattr__(self, "minima", _frozen(mn))
        object.__setattr__(self, "maxima", _frozen(mx))

    @property
    def mode_count(self) -> int:
        return int(self.maxima.size)


def _check_interleaved(minima: np.ndarray, maxima: np.ndarray) -> None:
    if minima.size != maxima.size + 1:
        raise ValueError(
            f"need one more minimum than maxima, got {minima.size} vs {maxima.size}"
        )
    if maxima.size == 0:
        raise ValueError("at least one maximum required")
    if not ((minima[:-1] < maxima).all() and (maxima < minima[1:]).all()):
        raise ValueError("minima and maxima must interleave strictly")


# ---------------------------------------------------------------------------
# bandwidth and density
# ---------------------------------------------------------------------------


def default_bandwidth(weights) -> float:
    """Median gap between consecutive distinct weight values.

    Raises DegenerateLayerError when fewer than two distinct values exist;
    callers hash such layers to their single value.
    """
    vals = np.unique(np.asarray(weights, dtype=np.float64).reshape(-1))
    if vals.size < 2:
        raise DegenerateLayerError("layer has fewer than 2 distinct values")
    gaps = np.diff(vals)
    return float(np.median(gaps))


def kde_density(
    weights,
    bandwidth: float,
    grid_size: int = DEFAULT_GRID_SIZE,
    max_samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> DensityEstimate:
    """Gaussian kernel density of the weight values on a uniform grid.

    The grid spans [min - 3*bandwidth, max + 3*bandwidth] so kernel tails are
    captured and the endpoint minima are meaningful. When ``max_samples`` is
    given and the layer is larger, the density is evaluated on a uniform
    random subsample (hashing itself still maps every weight).
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if grid_size < 16:
        raise ValueError("grid_size must be at least 16")
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise ValueError("no weights given")
    if not np.isfinite(w).all():
        raise NonFiniteError("weights contain NaN or Inf")
    lo, hi = float(w.min()), float(w.max())
    if max_samples is not None and w.size > max_samples:
        if rng is None:
            rng = np.random.default_rng(0)
        w = w[rng.choice(w.size, size=max_samples, replace=False)]
    grid = np.linspace(lo - 3.0 * bandwidth, hi + 3.0 * bandwidth, grid_size)
    values = np.zeros(grid_size, dtype=np.float64)
    for start in range(0, w.size, _KDE_CHUNK):
        chunk = w[start : start + _KDE_CHUNK]
        z = (grid[None, :] - chunk[:, None]) / bandwidth
        values += np.exp(-0.5 * z * z).sum(axis=0)
    values /= w.size * bandwidth * math.sqrt(2.0 * math.pi)
    return DensityEstimate(
        grid=grid, values=values, bandwidth=float(bandwidth), sample_count=int(w.size)
    )


# ---------------------------------------------------------------------------
# extrema and suppression
# ---------------------------------------------------------------------------


def extract_extrema(density: DensityEstimate) -> tuple[np.ndarray, np.ndarray]:
    """Interior extrema of the density plus the grid endpoints as minima.

    Extrema are strict sign changes of the discrete first difference;
    plateaus collapse to their midpoint index. Returns (minima, maxima) grid
    positions with the interleaving invariant enforced.
    """
    v = density.values
    d = np.diff(v)
    nz = np.flatnonzero(d)
    if nz.size == 0:
        raise DegenerateLayerError("constant density has no interior maximum")
    signs = np.sign(d[nz])
    maxima_idx: list[int] = []
    minima_idx: list[int] = []
    for i in range(signs.size - 1):
        if signs[i] == signs[i + 1]:
            continue
        # plateau between the end of one run and the start of the next
        left = nz[i] + 1
        right = nz[i + 1]
        mid = (left + right) // 2
        if signs[i] > 0:
            maxima_idx.append(mid)
        else:
            minima_idx.append(mid)
    if not maxima_idx:
        raise DegenerateLayerError("density has no interior maximum")
    grid = density.grid
    minima = np.concatenate(([grid[0]], grid[minima_idx], [grid[-1]]))
    maxima = grid[maxima_idx]
    _check_interleaved(minima, maxima)
    return minima, maxima


def nms_maxima(
    minima: np.ndarray,
    maxima: np.ndarray,
    tau: float,
    heights: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy suppression of maxima within distance tau of a taller one.

    Cells of suppressed maxima merge into the cell of the retained maximum
    that suppressed them, dropping the minima between. tau = 0 is the
    identity. Ties break toward the leftmost maximum.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    minima = np.asarray(minima, dtype=np.float64)
    maxima = np.asarray(maxima, dtype=np.float64)
    heights = np.asarray(heights, dtype=np.float64).reshape(-1)
    _check_interleaved(minima, maxima)
    if heights.shape != maxima.shape:
        raise ValueError("heights must align with maxima")
    k = maxima.size
    root = np.arange(k)
    retained: list[int] = []
    order = np.lexsort((np.arange(k), -heights))
    for idx in order:
        near = [r for r in retained if abs(maxima[idx] - maxima[r]) < tau]
        if near:
            root[idx] = min(near, key=lambda r: (abs(maxima[idx] - maxima[r]), r))
        else:
            retained.append(int(idx))
    keep = sorted(retained)
    new_minima = [minima[0]]
    for j in range(1, k):
        if root[j - 1] != root[j]:
            new_minima.append(minima[j])
    new_minima.append(minima[-1])
    out_minima = np.asarray(new_minima)
    out_maxima = maxima[keep]
    _check_interleaved(out_minima, out_maxima)
    return out_minima, out_maxima


# ---------------------------------------------------------------------------
# hashing
# ---------------------------------------------------------------------------


def hash_values(
    values: np.ndarray, minima: np.ndarray, maxima: np.ndarray
) -> np.ndarray:
    """Map each value to the representative of its partition cell.

    Cells are left-closed and right-open; the final cell also includes its
    right endpoint. Values outside the support raise OutOfSupportError.
    """
    minima = np.asarray(minima, dtype=np.float64)
    maxima = np.asarray(maxima, dtype=np.float64)
    _check_interleaved(minima, maxima)
    v = np.asarray(values, dtype=np.float64)
    if (v < minima[0]).any() or (v > minima[-1]).any():
        raise OutOfSupportError("value outside the partition support")
    idx = np.searchsorted(minima, v.reshape(-1), side="right") - 1
    idx = np.minimum(idx, maxima.size - 1)
    return maxima.astype(np.float32)[idx].reshape(v.shape)


def hash_layer(weights: Tensor4, minima: np.ndarray, maxima: np.ndarray) -> Tensor4:
    """Hash a weight block against an interleaved partition."""
    return Tensor4(hash_values(weights.data, minima, maxima))


def uniform_quantize_int8(weights: Tensor4) -> Tensor4:
    """Uniform 256-level quantization between the weight extremes.

    Rounding is half-to-even. Constant layers return unchanged.
    """
    data = weights.data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        return weights
    scale = (hi - lo) / 255.0
    q = lo + np.rint((data - lo) / scale) * scale
    return Tensor4(q.astype(np.float32))


def compression_ratio(distinct_before: int, distinct_after: int) -> float:
    """Percentage of removed distinct weight values."""
    if distinct_before <= 0:
        raise ValueError("distinct_before must be positive")
    if not (distinct_before >= distinct_after >= 1):
        raise ValueError("need distinct_before >= distinct_after >= 1")
    return 100.0 * (1.0 - distinct_after / distinct_before)


# ---------------------------------------------------------------------------
# whole-network driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HashConfig:
    grid_size: int = DEFAULT_GRID_SIZE
    tau: float | tuple[float, ...] = 0.0
    bandwidth: float | tuple[float | None, ...] | None = None
    subsample_threshold: int = DEFAULT_SUBSAMPLE_THRESHOLD
    subsample_size: int = DEFAULT_SUBSAMPLE_SIZE
    seed: int = 0

    def tau_for(self, index: int) -> float:
        if isinstance(self.tau, (int, float)):
            return float(self.tau)
        return float(self.tau[index])

    def bandwidth_for(self, index: int) -> float | None:
        if self.bandwidth is None or isinstance(self.bandwidth, (int, float)):
            return self.bandwidth
        return self.bandwidth[index]


def hash_single_layer(
    weights: Tensor4,
    config: HashConfig,
    index: int = 0,
    keep_density: bool = False,
) -> HashResult:
    """Run the density pipeline on one weight block."""
    flat = weights.flat()
    before = distinct_values(flat)
    bw = config.bandwidth_for(index)
    try:
        if bw is None:
            bw = default_bandwidth(flat)
        rng = np.random.default_rng([config.seed, index])
        density = kde_density(
            flat,
            bw,
            grid_size=config.grid_size,
            max_samples=(
                config.subsample_size
                if flat.size > config.subsample_threshold
                else None
            ),
            rng=rng,
        )
        minima, maxima = extract_extrema(density)
        tau = config.tau_for(index)
        if tau > 0:
            minima, maxima = nms_maxima(
                minima, maxima, tau, density.heights_at(maxima)
            )
        hashed = hash_layer(weights, minima, maxima)
    except DegenerateLayerError:
        value = float(flat[0]) if before == 1 else float(np.median(flat))
        return HashResult(
            minima=np.asarray([value]),
            maxima=np.asarray([value]),
            bandwidth=0.0,
            hashed=weights,
            distinct_before=before,
            distinct_after=before,
            degenerate=True,
        )
    return HashResult(
        minima=minima,
        maxima=maxima,
        bandwidth=float(bw),
        hashed=hashed,
        distinct_before=before,
        distinct_after=distinct_values(hashed.flat()),
        density=density if keep_density else None,
    )


def hash_network(
    net: NetworkGraph, config: HashConfig | None = None
) -> tuple[NetworkGraph, list[HashResult | None]]:
    """Hash every prunable layer; non-prunable layers pass through untouched.

    Results align with the layer list (None for untouched layers). The
    outcome is deterministic for a given seed regardless of the thread
    schedule: each layer derives its own random stream from (seed, index).
    """
    config = config or HashConfig()

    def run(item):
        i, layer = item
        if not layer.prunable:
            return None
        try:
            return hash_single_layer(layer.weights, config, index=i)
        except (ValueError, ArithmeticError) as exc:
            raise type(exc)(f"layer {i}: {exc}") from exc

    results = thread_map(run, list(enumerate(net.layers)))
    new_layers = []
    for layer, res in zip(net.layers, results):
        if res is None:
            new_layers.append(layer)
        else:
            new_layers.append(layer.with_weights(res.hashed))
    return NetworkGraph(tuple(new_layers), net.skips), results
