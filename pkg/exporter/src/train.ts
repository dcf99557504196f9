/**
 * Toy-model training. Seeded data, seeded initializers, and a fixed batch
 * order keep reruns reproducible to within normal float drift.
 */

import * as tf from "@tensorflow/tfjs";

import { ToyDataset, makeToyDataset } from "./data";
import { buildToyCnn } from "./model";

export interface TrainResult {
  model: tf.LayersModel;
  trainAccuracy: number;
  testAccuracy: number;
}

export function datasetTensors(data: ToyDataset): { x: tf.Tensor; y: tf.Tensor } {
  const count = data.labels.length;
  const x = tf.tensor(data.samples, [count, ...data.sampleShape]);
  const y = tf.oneHot(tf.tensor1d(new Int32Array(data.labels), "int32"), 2);
  return { x, y };
}

export function evaluateAccuracy(model: tf.LayersModel, data: ToyDataset): number {
  return tf.tidy(() => {
    const { x, y } = datasetTensors(data);
    const logits = model.predict(x) as tf.Tensor;
    const hits = logits.argMax(-1).equal(y.argMax(-1)).sum().dataSync()[0];
    return hits / data.labels.length;
  });
}

export async function trainToyModel(
  epochs: number,
  seed: number,
  trainCount = 512,
  testCount = 256,
): Promise<TrainResult & { trainData: ToyDataset; testData: ToyDataset }> {
  const trainData = makeToyDataset(trainCount, seed);
  const testData = makeToyDataset(testCount, seed + 1);
  const model = buildToyCnn(seed);
  model.compile({
    optimizer: tf.train.adam(0.01),
    loss: (a, b) => tf.losses.softmaxCrossEntropy(a, b),
    metrics: [],
  });
  if (epochs > 0) {
    const { x, y } = datasetTensors(trainData);
    await model.fit(x, y, { epochs, batchSize: 64, shuffle: false, verbose: 0 });
    x.dispose();
    y.dispose();
  }
  return {
    model,
    trainAccuracy: evaluateAccuracy(model, trainData),
    testAccuracy: evaluateAccuracy(model, testData),
    trainData,
    testData,
  };
}
