"""Bundle interchange format.

A bundle is a directory holding ``manifest.json`` plus ``weights.bin``. The
manifest describes layer geometry and per-layer element offsets into the
binary blob; the blob is a flat little-endian stream of 4-byte elements in
declared order (weights, then bias, then batch-norm mean and std per layer).
Split layers extend the layout with unique-kernel blobs followed by
duplication maps stored as little-endian u32.

Offsets are element counts, not bytes. Round-tripping a network through
``save_bundle`` and ``load_bundle`` is the identity on weights bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import (
    BatchNormStats,
    LayerSpec,
    NetworkGraph,
    NonFiniteError,
    ShapeError,
    Tensor4,
)
from .split import SplitLayer, SplitNetwork

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"
_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")


class BundleError(ValueError):
    """Raised when a bundle is missing, truncated, or inconsistent."""


def _bundle_dir(path) -> Path:
    p = Path(path)
    return p.parent if p.name == MANIFEST_NAME else p


def _layer_entry(layer, offset: int) -> tuple[dict, list[np.ndarray], int]:
    """Manifest entry plus binary chunks for one layer; returns next offset."""
    entry = {
        "kind": layer.kind,
        "h": layer.kernel_h,
        "w": layer.kernel_w,
        "c_in": layer.c_in,
        "c_out": layer.c_out,
        "stride": layer.stride,
        "padding": layer.padding,
        "activation": layer.activation,
        "prunable": layer.prunable,
        "has_bn": layer.bn is not None,
        "offset": offset,
    }
    chunks: list[np.ndarray] = []
    if isinstance(layer, SplitLayer):
        entry["split"] = True
        entry["unique_counts"] = layer.unique_counts()
        for u in layer.unique_kernels:
            chunks.append(u.reshape(-1).astype(_F32))
    else:
        chunks.append(layer.weights.flat().astype(_F32))
    chunks.append(layer.bias.astype(_F32))
    if layer.bn is not None:
        chunks.append(layer.bn.mean.astype(_F32))
        chunks.append(layer.bn.std.astype(_F32))
    pos = offset + sum(c.size for c in chunks)
    if isinstance(layer, SplitLayer):
        dup_offsets = []
        for d in layer.dup:
            dup_offsets.append(pos)
            chunks.append(d.astype(_U32))
            pos += d.size
        entry["dup_offsets"] = dup_offsets
    return entry, chunks, pos


def save_bundle(net, path) -> Path:
    """Write a network (dense or split) as a bundle directory."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks: list[np.ndarray] = []
    offset = 0
    for layer in net.layers:
        entry, layer_chunks, offset = _layer_entry(layer, offset)
        entries.append(entry)
        chunks.extend(layer_chunks)
    manifest = {
        "version": 1,
        "layers": entries,
        "skips": sorted([int(s), int(d)] for s, d in net.skips),
    }
    blob = b"".join(c.tobytes() for c in chunks)
    (out / WEIGHTS_NAME).write_bytes(blob)
    with (out / MANIFEST_NAME).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out


def _take_f32(blob: np.ndarray, offset: int, count: int, what: str) -> np.ndarray:
    if offset < 0 or offset + count > blob.size:
        raise BundleError(
            f"{what}: needs elements [{offset}, {offset + count}) but blob "
            f"holds {blob.size}"
        )
    return blob[offset : offset + count]


def _load_layer(entry: dict, blob: np.ndarray, index: int):
    try:
        kind = entry["kind"]
        h, w = int(entry["h"]), int(entry["w"])
        c_in, c_out = int(entry["c_in"]), int(entry["c_out"])
        offset = int(entry["offset"])
    except KeyError as exc:
        raise BundleError(f"layer {index}: manifest missing field {exc}") from exc
    name = f"layer {index}"
    common = {
        "stride": int(entry.get("stride", 1)),
        "padding": entry.get("padding", "valid"),
        "activation": entry.get("activation", "relu"),
        "prunable": bool(entry.get("prunable", True)),
    }
    pos = offset
    if entry.get("split"):
        counts = [int(k) for k in entry["unique_counts"]]
        if len(counts) != c_in:
            raise BundleError(f"{name}: unique_counts length != c_in")
        uniq = []
        for c, k in enumerate(counts):
            vals = _take_f32(blob, pos, k * h * w, f"{name} kernels[{c}]")
            uniq.append(vals.reshape(k, h, w).copy())
            pos += k * h * w
    else:
        vals = _take_f32(blob, pos, h * w * c_in * c_out, f"{name} weights")
        weights = Tensor4.from_flat(h, w, c_in, c_out, vals.copy())
        pos += h * w * c_in * c_out
    bias = _take_f32(blob, pos, c_out, f"{name} bias").copy()
    pos += c_out
    bn = None
    if entry.get("has_bn"):
        mean = _take_f32(blob, pos, c_out, f"{name} bn mean").copy()
        std = _take_f32(blob, pos + c_out, c_out, f"{name} bn std").copy()
        pos += 2 * c_out
        bn = BatchNormStats(mean=mean, std=std)
    if entry.get("split"):
        dup_offsets = [int(o) for o in entry["dup_offsets"]]
        if len(dup_offsets) != c_in:
            raise BundleError(f"{name}: dup_offsets length != c_in")
        dup = []
        for c, off in enumerate(dup_offsets):
            raw = _take_f32(blob, off, c_out, f"{name} dup[{c}]")
            dup.append(raw.view(_U32).astype(np.int64))
        return SplitLayer(
            kind=kind,
            unique_kernels=tuple(uniq),
            dup=tuple(dup),
            bias=bias,
            c_out=c_out,
            bn=bn,
            **common,
        )
    return LayerSpec(kind=kind, weights=weights, bias=bias, bn=bn, **common)


def load_bundle(path):
    """Load a bundle directory into a NetworkGraph or SplitNetwork.

    Raises BundleError on missing files, blob length mismatches, or shape
    inconsistencies, and NonFiniteError on NaN or Inf weights.
    """
    d = _bundle_dir(path)
    manifest_path = d / MANIFEST_NAME
    weights_path = d / WEIGHTS_NAME
    if not manifest_path.is_file():
        raise BundleError(f"missing {manifest_path}")
    if not weights_path.is_file():
        raise BundleError(f"missing {weights_path}")
    with manifest_path.open("r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != 1:
        raise BundleError(f"unsupported bundle version {manifest.get('version')!r}")
    raw = weights_path.read_bytes()
    if len(raw) % 4:
        raise BundleError(f"blob size {len(raw)} is not a multiple of 4 bytes")
    blob = np.frombuffer(raw, dtype=_F32)
    declared = 0
    for entry in manifest.get("layers", []):
        n = int(entry["h"]) * int(entry["w"]) * int(entry["c_in"]) * int(entry["c_out"])
        if entry.get("split"):
            n = sum(int(k) for k in entry["unique_counts"]) * int(entry["h"]) * int(
                entry["w"]
            ) + int(entry["c_in"]) * int(entry["c_out"])
        n += int(entry["c_out"]) * (1 + 2 * bool(entry.get("has_bn")))
        declared += n
    if declared != blob.size:
        raise BundleError(
            f"manifest declares {declared} elements but blob holds {blob.size}"
        )
    layers = []
    any_split = False
    for i, entry in enumerate(manifest.get("layers", [])):
        try:
            layer = _load_layer(entry, blob, i)
        except (ShapeError, NonFiniteError, BundleError):
            raise
        except (ValueError, TypeError) as exc:
            raise BundleError(f"layer {i}: {exc}") from exc
        any_split = any_split or isinstance(layer, SplitLayer)
        layers.append(layer)
    skips = frozenset((int(s), int(d)) for s, d in manifest.get("skips", []))
    try:
        if any_split:
            return SplitNetwork(tuple(layers), skips)
        return NetworkGraph(tuple(layers), skips)
    except (ShapeError, ValueError) as exc:
        raise BundleError(str(exc)) from exc


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

SAMPLES_NAME = "samples.bin"
LABELS_NAME = "labels.bin"
DATASET_META_NAME = "dataset.json"


def save_dataset(samples: np.ndarray, labels: np.ndarray, path) -> Path:
    """Write samples (float32) and labels (u32) with a JSON shape sidecar."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    x = np.asarray(samples, dtype=_F32)
    y = np.asarray(labels, dtype=_U32).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ShapeError("samples and labels disagree on count")
    (out / SAMPLES_NAME).write_bytes(np.ascontiguousarray(x).tobytes())
    (out / LABELS_NAME).write_bytes(np.ascontiguousarray(y).tobytes())
    meta = {"count": int(x.shape[0]), "sample_shape": [int(s) for s in x.shape[1:]]}
    with (out / DATASET_META_NAME).open("w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out


def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    d = Path(path)
    meta_path = d / DATASET_META_NAME
    if not meta_path.is_file():
        raise BundleError(f"missing {meta_path}")
    with meta_path.open("r", encoding="utf-8") as fh:
        meta = json.load(fh)
    count = int(meta["count"])
    shape = tuple(int(s) for s in meta["sample_shape"])
    x = np.frombuffer((d / SAMPLES_NAME).read_bytes(), dtype=_F32)
    y = np.frombuffer((d / LABELS_NAME).read_bytes(), dtype=_U32)
    expected = count * int(np.prod(shape, dtype=np.int64)) if shape else count
    if x.size != expected:
        raise BundleError(f"samples.bin holds {x.size} values, expected {expected}")
    if y.size != count:
        raise BundleError(f"labels.bin holds {y.size} labels, expected {count}")
    return x.reshape((count,) + shape).copy(), y.astype(np.int64)
