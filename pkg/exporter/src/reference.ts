/**
 * Reference evaluator for exported bundles.
 *
 * Mirrors the consumer's forward semantics (per-channel correlation with
 * ascending tap order, bias, batch-norm affine, then activation) so the
 * exporter can verify its own output against the source model without
 * shelling out.
 */

import { Bundle, BundleLayer } from "./bundle";

export interface FeatureMap {
  h: number;
  w: number;
  c: number;
  /** Row-major [h][w][c]. */
  data: Float32Array;
}

function outputSpatial(layer: BundleLayer, inH: number, inW: number) {
  if (layer.padding === "same") {
    return {
      outH: Math.ceil(inH / layer.stride),
      outW: Math.ceil(inW / layer.stride),
    };
  }
  const outH = Math.floor((inH - layer.h) / layer.stride) + 1;
  const outW = Math.floor((inW - layer.w) / layer.stride) + 1;
  if (outH < 1 || outW < 1) {
    throw new Error(`spatial input ${inH}x${inW} smaller than kernel`);
  }
  return { outH, outW };
}

function padSame(x: FeatureMap, layer: BundleLayer): FeatureMap {
  const { outH, outW } = outputSpatial(layer, x.h, x.w);
  const padH = Math.max((outH - 1) * layer.stride + layer.h - x.h, 0);
  const padW = Math.max((outW - 1) * layer.stride + layer.w - x.w, 0);
  const top = Math.floor(padH / 2);
  const left = Math.floor(padW / 2);
  const h = x.h + padH;
  const w = x.w + padW;
  const data = new Float32Array(h * w * x.c);
  for (let i = 0; i < x.h; i++) {
    for (let j = 0; j < x.w; j++) {
      for (let c = 0; c < x.c; c++) {
        data[((i + top) * w + (j + left)) * x.c + c] = x.data[(i * x.w + j) * x.c + c];
      }
    }
  }
  return { h, w, c: x.c, data };
}

export function applyLayer(layer: BundleLayer, input: FeatureMap): FeatureMap {
  if (input.c !== layer.cIn) {
    throw new Error(`input has ${input.c} channels, layer expects ${layer.cIn}`);
  }
  const { outH, outW } = outputSpatial(layer, input.h, input.w);
  const x = layer.padding === "same" ? padSame(input, layer) : input;
  const out = new Float32Array(outH * outW * layer.cOut);
  const wPitchC = layer.cOut;
  const wPitchIn = layer.cIn * layer.cOut;
  const wPitchW = layer.w * wPitchIn;
  for (let c = 0; c < layer.cIn; c++) {
    for (let dh = 0; dh < layer.h; dh++) {
      for (let dw = 0; dw < layer.w; dw++) {
        for (let i = 0; i < outH; i++) {
          for (let j = 0; j < outW; j++) {
            const src =
              ((i * layer.stride + dh) * x.w + (j * layer.stride + dw)) * x.c + c;
            const v = x.data[src];
            const base = (i * outW + j) * layer.cOut;
            const wBase = dh * wPitchW + dw * wPitchIn + c * wPitchC;
            for (let o = 0; o < layer.cOut; o++) {
              out[base + o] += v * layer.weights[wBase + o];
            }
          }
        }
      }
    }
  }
  for (let p = 0; p < outH * outW; p++) {
    for (let o = 0; o < layer.cOut; o++) {
      let v = out[p * layer.cOut + o] + layer.bias[o];
      if (layer.bn) {
        v = (v - layer.bn.mean[o]) / layer.bn.std[o];
      }
      if (layer.activation === "relu" && v < 0) v = 0;
      out[p * layer.cOut + o] = v;
    }
  }
  return { h: outH, w: outW, c: layer.cOut, data: out };
}

/** Evaluate one sample laid out [h][w][c]; returns the flat output. */
export function forward(bundle: Bundle, input: FeatureMap): Float32Array {
  if (bundle.skips.length > 0) {
    throw new Error("reference forward covers plain chains only");
  }
  let cur = input;
  for (const layer of bundle.layers) {
    cur = applyLayer(layer, cur);
  }
  return cur.data;
}
