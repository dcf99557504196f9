/**
 * Toy model builders. All-convolutional so the exported chain needs no
 * reshapes: two 3x3 stages, a 4x4 stage that collapses the remaining
 * spatial extent, a 1x1 mixing stage, and a 1x1 head producing two logits.
 * The batch-norm affine (with its positive learned scale) maps exactly
 * onto the bundle's (x - mean) / std form at export time.
 */

import * as tf from "@tensorflow/tfjs";

export const TOY_ARCH = "toy-cnn";
export const MLP_ARCH = "mlp";

export function buildToyCnn(seed: number): tf.LayersModel {
  let s = seed;
  const init = () => tf.initializers.glorotUniform({ seed: s++ });
  const model = tf.sequential();
  model.add(
    tf.layers.conv2d({
      inputShape: [8, 8, 1],
      kernelSize: 3,
      filters: 8,
      activation: "linear",
      kernelInitializer: init(),
    }),
  );
  model.add(tf.layers.batchNormalization({}));
  model.add(tf.layers.reLU());
  model.add(
    tf.layers.conv2d({
      kernelSize: 3,
      filters: 8,
      activation: "relu",
      kernelInitializer: init(),
    }),
  );
  model.add(
    tf.layers.conv2d({
      kernelSize: 4,
      filters: 16,
      activation: "relu",
      kernelInitializer: init(),
    }),
  );
  model.add(
    tf.layers.conv2d({
      kernelSize: 1,
      filters: 16,
      activation: "relu",
      kernelInitializer: init(),
    }),
  );
  model.add(
    tf.layers.conv2d({
      kernelSize: 1,
      filters: 2,
      activation: "linear",
      kernelInitializer: init(),
    }),
  );
  model.add(tf.layers.flatten());
  return model;
}

export function buildMlp(seed: number, widths: number[] = [6, 10, 4]): tf.LayersModel {
  let s = seed;
  const model = tf.sequential();
  widths.slice(1).forEach((units, i) => {
    model.add(
      tf.layers.dense({
        units,
        inputShape: i === 0 ? [widths[0]] : undefined,
        activation: i < widths.length - 2 ? "relu" : "linear",
        kernelInitializer: tf.initializers.glorotUniform({ seed: s++ }),
      }),
    );
  });
  return model;
}

export function buildArch(arch: string, seed: number): tf.LayersModel {
  if (arch === TOY_ARCH) return buildToyCnn(seed);
  if (arch === MLP_ARCH) return buildMlp(seed);
  throw new Error(`unknown architecture ${arch}`);
}
