/**
 * Writers for the compression toolkit's bundle and dataset formats.
 *
 * A bundle directory holds manifest.json plus weights.bin, a flat stream of
 * little-endian 4-byte elements in declared order: weights laid out as
 * [h][w][c_in][c_out], then bias, then batch-norm mean and std per layer.
 * Manifest offsets count elements, not bytes.
 */

import * as fs from "fs";
import * as path from "path";

export type Padding = "valid" | "same";
export type Activation = "relu" | "identity";

export interface BundleLayer {
  kind: "dense" | "conv2d";
  h: number;
  w: number;
  cIn: number;
  cOut: number;
  stride: number;
  padding: Padding;
  activation: Activation;
  prunable: boolean;
  /** Flat weights in [h][w][c_in][c_out] order. */
  weights: Float32Array;
  bias: Float32Array;
  bn: { mean: Float32Array; std: Float32Array } | null;
}

export interface Bundle {
  layers: BundleLayer[];
  skips: Array<[number, number]>;
}

export function layerElementCount(layer: BundleLayer): number {
  const weightCount = layer.h * layer.w * layer.cIn * layer.cOut;
  return weightCount + layer.cOut * (1 + (layer.bn ? 2 : 0));
}

export function validateLayer(layer: BundleLayer, index: number): void {
  const expected = layer.h * layer.w * layer.cIn * layer.cOut;
  if (layer.weights.length !== expected) {
    throw new Error(
      `layer ${index}: ${layer.weights.length} weights for shape ` +
        `(${layer.h},${layer.w},${layer.cIn},${layer.cOut})`,
    );
  }
  if (layer.bias.length !== layer.cOut) {
    throw new Error(`layer ${index}: bias length != c_out`);
  }
  if (layer.bn) {
    if (
      layer.bn.mean.length !== layer.cOut ||
      layer.bn.std.length !== layer.cOut
    ) {
      throw new Error(`layer ${index}: batch-norm arrays must match c_out`);
    }
    for (const s of layer.bn.std) {
      if (!(s > 0)) throw new Error(`layer ${index}: batch-norm std must be > 0`);
    }
  }
  const all = [layer.weights, layer.bias];
  if (layer.bn) all.push(layer.bn.mean, layer.bn.std);
  for (const arr of all) {
    for (const v of arr) {
      if (!Number.isFinite(v)) {
        throw new Error(`layer ${index}: non-finite value in exported tensors`);
      }
    }
  }
}

export function writeBundle(bundle: Bundle, dir: string): void {
  fs.mkdirSync(dir, { recursive: true });
  const entries: object[] = [];
  const chunks: Float32Array[] = [];
  let offset = 0;
  bundle.layers.forEach((layer, i) => {
    validateLayer(layer, i);
    entries.push({
      kind: layer.kind,
      h: layer.h,
      w: layer.w,
      c_in: layer.cIn,
      c_out: layer.cOut,
      stride: layer.stride,
      padding: layer.padding,
      activation: layer.activation,
      prunable: layer.prunable,
      has_bn: layer.bn !== null,
      offset,
    });
    chunks.push(layer.weights, layer.bias);
    if (layer.bn) chunks.push(layer.bn.mean, layer.bn.std);
    offset += layerElementCount(layer);
  });
  const blob = Buffer.alloc(offset * 4);
  let pos = 0;
  for (const chunk of chunks) {
    for (const v of chunk) {
      blob.writeFloatLE(Math.fround(v), pos);
      pos += 4;
    }
  }
  const manifest = { version: 1, layers: entries, skips: bundle.skips };
  fs.writeFileSync(path.join(dir, "weights.bin"), blob);
  fs.writeFileSync(
    path.join(dir, "manifest.json"),
    JSON.stringify(manifest, null, 1) + "\n",
  );
}

export function writeDataset(
  samples: Float32Array,
  sampleShape: number[],
  labels: Uint32Array,
  dir: string,
): void {
  fs.mkdirSync(dir, { recursive: true });
  const per = sampleShape.reduce((a, b) => a * b, 1);
  if (samples.length !== labels.length * per) {
    throw new Error("samples and labels disagree on count");
  }
  const sbuf = Buffer.alloc(samples.length * 4);
  samples.forEach((v, i) => sbuf.writeFloatLE(Math.fround(v), i * 4));
  const lbuf = Buffer.alloc(labels.length * 4);
  labels.forEach((v, i) => lbuf.writeUInt32LE(v, i * 4));
  fs.writeFileSync(path.join(dir, "samples.bin"), sbuf);
  fs.writeFileSync(path.join(dir, "labels.bin"), lbuf);
  fs.writeFileSync(
    path.join(dir, "dataset.json"),
    JSON.stringify({ count: labels.length, sample_shape: sampleShape }, null, 1) +
      "\n",
  );
}
