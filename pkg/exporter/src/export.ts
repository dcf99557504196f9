/**
 * Conversion from tfjs layer models to the bundle format.
 *
 * Supported chains: Conv2D / Dense stages, each optionally followed by a
 * BatchNormalization (trained without scale) and a relu activation layer,
 * plus shape-neutral Flatten at 1x1 spatial extent. Anything else aborts
 * with the offending layer names. Every export is self-verified by
 * replaying random inputs through a reference evaluator of the written
 * bundle and comparing against the source model.
 */

import * as tf from "@tensorflow/tfjs";

import { Bundle, BundleLayer, writeBundle } from "./bundle";
import { FeatureMap, forward } from "./reference";
import { Rng } from "./data";

export type BnMode = "keep-stats" | "fold";

export const EXPORT_TOLERANCE = 1e-4;

function toFloat32(t: tf.Tensor): Float32Array {
  return new Float32Array(t.dataSync());
}

function activationOf(config: object): "relu" | "identity" {
  const name = (config as { activation?: string }).activation ?? "linear";
  if (name === "relu") return "relu";
  if (name === "linear") return "identity";
  throw new Error(`unsupported activation ${name}`);
}

function spatialOf(layer: tf.layers.Layer): Array<number | null> | null {
  const input = layer.input as tf.SymbolicTensor;
  const shape = Array.isArray(input) ? null : input.shape;
  return shape ? shape.slice(1) : null;
}

export function convertModel(model: tf.LayersModel, bnMode: BnMode): Bundle {
  const layers: BundleLayer[] = [];
  const unsupported: string[] = [];
  for (const layer of model.layers) {
    const cls = layer.getClassName();
    if (cls === "InputLayer") continue;
    if (cls === "Conv2D" || cls === "Dense") {
      const config = layer.getConfig();
      const weights = layer.getWeights();
      const kernel = weights[0];
      const useBias = (config.useBias as boolean | undefined) ?? true;
      let h: number, w: number, cIn: number, cOut: number;
      let kind: "dense" | "conv2d";
      let stride = 1;
      let padding: "valid" | "same" = "valid";
      if (cls === "Conv2D") {
        [h, w, cIn, cOut] = kernel.shape as number[];
        kind = "conv2d";
        const strides = config.strides as number | number[];
        stride = Array.isArray(strides) ? strides[0] : (strides as number);
        padding = (config.padding as string) === "same" ? "same" : "valid";
      } else {
        [cIn, cOut] = kernel.shape as number[];
        h = 1;
        w = 1;
        kind = "dense";
      }
      layers.push({
        kind,
        h,
        w,
        cIn,
        cOut,
        stride,
        padding,
        activation: activationOf(config),
        prunable: true,
        weights: toFloat32(kernel),
        bias: useBias ? toFloat32(weights[1]) : new Float32Array(cOut),
        bn: null,
      });
      continue;
    }
    if (cls === "BatchNormalization") {
      const prev = layers[layers.length - 1];
      if (!prev || prev.bn !== null) {
        unsupported.push(`${cls}(${layer.name}): nothing to attach to`);
        continue;
      }
      if (prev.activation !== "identity") {
        unsupported.push(
          `${cls}(${layer.name}): normalization after an activated layer`,
        );
        continue;
      }
      const config = layer.getConfig();
      const eps = (config.epsilon as number | undefined) ?? 1e-3;
      const scale = (config.scale as boolean | undefined) ?? true;
      const center = (config.center as boolean | undefined) ?? true;
      const weights = layer.getWeights();
      let cursor = 0;
      const gamma = scale
        ? toFloat32(weights[cursor++])
        : new Float32Array(prev.cOut).fill(1);
      const beta = center
        ? toFloat32(weights[cursor++])
        : new Float32Array(prev.cOut);
      const mean = toFloat32(weights[cursor++]);
      const variance = toFloat32(weights[cursor]);
      const denom = variance.map((v) => Math.sqrt(v + eps));
      if (bnMode === "keep-stats") {
        // gamma*(z-mean)/sqrt(var+eps)+beta == (z-mean')/std' for gamma > 0
        if (gamma.some((g) => g <= 0)) {
          unsupported.push(
            `${cls}(${layer.name}): non-positive scale cannot map onto (x-mean)/std`,
          );
          continue;
        }
        const std = new Float32Array(prev.cOut);
        const shifted = new Float32Array(prev.cOut);
        for (let o = 0; o < prev.cOut; o++) {
          std[o] = denom[o] / gamma[o];
          shifted[o] = mean[o] - beta[o] * std[o];
        }
        prev.bn = { mean: shifted, std };
      } else {
        const perOut = prev.h * prev.w * prev.cIn;
        for (let p = 0; p < perOut; p++) {
          for (let o = 0; o < prev.cOut; o++) {
            prev.weights[p * prev.cOut + o] *= gamma[o] / denom[o];
          }
        }
        for (let o = 0; o < prev.cOut; o++) {
          prev.bias[o] =
            ((prev.bias[o] - mean[o]) * gamma[o]) / denom[o] + beta[o];
        }
      }
      continue;
    }
    if (cls === "ReLU" || cls === "Activation") {
      const name =
        cls === "ReLU" ? "relu" : ((layer.getConfig().activation as string) ?? "");
      if (name === "linear") continue;
      if (name !== "relu") {
        unsupported.push(`${cls}(${layer.name}): activation ${name}`);
        continue;
      }
      const prev = layers[layers.length - 1];
      if (!prev || prev.activation !== "identity") {
        unsupported.push(`${cls}(${layer.name}): no pending linear stage`);
        continue;
      }
      prev.activation = "relu";
      continue;
    }
    if (cls === "Flatten") {
      const spatial = spatialOf(layer);
      if (spatial && spatial.length === 3 && spatial[0] === 1 && spatial[1] === 1) {
        continue; // pure reshape
      }
      unsupported.push(`${cls}(${layer.name}): flattening a non-1x1 feature map`);
      continue;
    }
    unsupported.push(`${cls}(${layer.name})`);
  }
  if (unsupported.length > 0) {
    throw new Error(`unsupported layers: ${unsupported.join(", ")}`);
  }
  if (layers.length === 0) {
    throw new Error("model contains no exportable layers");
  }
  return { layers, skips: [] };
}

function inputShapeOf(model: tf.LayersModel): number[] {
  const shape = model.inputs[0].shape.slice(1);
  if (shape.some((d) => d === null)) {
    throw new Error("dynamic input shapes are not exportable");
  }
  return shape as number[];
}

export function verifyAgainstModel(
  bundle: Bundle,
  model: tf.LayersModel,
  samples = 32,
  seed = 20_240,
): number {
  const shape = inputShapeOf(model);
  const per = shape.reduce((a, b) => a * b, 1);
  const rng = new Rng(seed);
  let worst = 0;
  for (let t = 0; t < samples; t++) {
    const values = new Float32Array(per);
    for (let i = 0; i < per; i++) values[i] = rng.normal();
    const fm: FeatureMap =
      shape.length === 3
        ? { h: shape[0], w: shape[1], c: shape[2], data: values }
        : { h: 1, w: 1, c: shape[0], data: values };
    const ref = forward(bundle, fm);
    const out = tf.tidy(() => {
      const x = tf.tensor(values, [1, ...shape]);
      return (model.predict(x) as tf.Tensor).dataSync();
    });
    if (ref.length !== out.length) {
      throw new Error(
        `output sizes differ: bundle ${ref.length} vs model ${out.length}`,
      );
    }
    for (let i = 0; i < ref.length; i++) {
      worst = Math.max(worst, Math.abs(ref[i] - out[i]));
    }
  }
  return worst;
}

export function exportModel(
  model: tf.LayersModel,
  bnMode: BnMode,
  outDir: string,
): { bundle: Bundle; maxDeviation: number } {
  const bundle = convertModel(model, bnMode);
  const maxDeviation = verifyAgainstModel(bundle, model);
  if (maxDeviation > EXPORT_TOLERANCE) {
    throw new Error(
      `export verification failed: max deviation ${maxDeviation} > ${EXPORT_TOLERANCE}`,
    );
  }
  writeBundle(bundle, outDir);
  return { bundle, maxDeviation };
}
