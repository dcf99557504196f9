/**
 * Checkpoint files: checkpoint.json carries the architecture name, seed,
 * recorded accuracy, and per-tensor shapes; checkpoint.bin carries the
 * weight values as little-endian float32 in model.getWeights() order.
 */

import * as fs from "fs";
import * as path from "path";
import * as tf from "@tensorflow/tfjs";

import { buildArch } from "./model";

export interface CheckpointMeta {
  version: 1;
  arch: string;
  seed: number;
  testAccuracy: number | null;
  shapes: number[][];
}

export function saveCheckpoint(
  model: tf.LayersModel,
  arch: string,
  seed: number,
  testAccuracy: number | null,
  dir: string,
): void {
  fs.mkdirSync(dir, { recursive: true });
  const tensors = model.getWeights();
  const shapes = tensors.map((t) => t.shape.slice());
  const flat: number[] = [];
  for (const t of tensors) {
    const data = t.dataSync();
    for (let i = 0; i < data.length; i++) flat.push(data[i]);
  }
  const buf = Buffer.alloc(flat.length * 4);
  flat.forEach((v, i) => buf.writeFloatLE(Math.fround(v), i * 4));
  const meta: CheckpointMeta = {
    version: 1,
    arch,
    seed,
    testAccuracy,
    shapes,
  };
  fs.writeFileSync(path.join(dir, "checkpoint.bin"), buf);
  fs.writeFileSync(
    path.join(dir, "checkpoint.json"),
    JSON.stringify(meta, null, 1) + "\n",
  );
}

export function loadCheckpoint(dir: string): {
  model: tf.LayersModel;
  meta: CheckpointMeta;
} {
  const metaPath = path.join(dir, "checkpoint.json");
  if (!fs.existsSync(metaPath)) {
    throw new Error(`missing ${metaPath}`);
  }
  const meta = JSON.parse(fs.readFileSync(metaPath, "utf-8")) as CheckpointMeta;
  const raw = fs.readFileSync(path.join(dir, "checkpoint.bin"));
  const model = buildArch(meta.arch, meta.seed);
  const tensors: tf.Tensor[] = [];
  let pos = 0;
  for (const shape of meta.shapes) {
    const count = shape.reduce((a, b) => a * b, 1);
    const values = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      values[i] = raw.readFloatLE(pos);
      pos += 4;
    }
    tensors.push(tf.tensor(values, shape));
  }
  if (pos !== raw.length) {
    throw new Error(
      `checkpoint.bin holds ${raw.length / 4} elements, metadata expects ${pos / 4}`,
    );
  }
  model.setWeights(tensors);
  tensors.forEach((t) => t.dispose());
  return { model, meta };
}
