/**
 * Exporter command line.
 *
 *   train-toy --out DIR [--epochs N] [--seed S] [--data DIR]
 *       trains the toy CNN, saves a checkpoint, and (with --data) writes
 *       the evaluation set in the consumer's dataset format;
 *   export --checkpoint DIR --out DIR [--bn-mode keep-stats|fold]
 *       converts a checkpoint into a bundle, self-verifying the result;
 *   gen-data --out DIR [--count N] [--seed S]
 *       writes a standalone toy dataset.
 */

import { loadCheckpoint, saveCheckpoint } from "./checkpoint";
import { makeToyDataset } from "./data";
import { BnMode, exportModel } from "./export";
import { TOY_ARCH } from "./model";
import { trainToyModel } from "./train";
import { writeDataset } from "./bundle";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near ${key}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

function required(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (!value) throw new Error(`missing --${name}`);
  return value;
}

async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  const flags = parseFlags(rest);
  if (command === "train-toy") {
    const out = required(flags, "out");
    const epochs = Number(flags.get("epochs") ?? "12");
    const seed = Number(flags.get("seed") ?? "0");
    const result = await trainToyModel(epochs, seed);
    saveCheckpoint(result.model, TOY_ARCH, seed, result.testAccuracy, out);
    const dataDir = flags.get("data");
    if (dataDir) {
      writeDataset(
        result.testData.samples,
        result.testData.sampleShape,
        result.testData.labels,
        dataDir,
      );
    }
    console.log(
      `trained ${epochs} epochs, test accuracy ${result.testAccuracy.toFixed(4)}`,
    );
    return 0;
  }
  if (command === "export") {
    const checkpoint = required(flags, "checkpoint");
    const out = required(flags, "out");
    const bnMode = (flags.get("bn-mode") ?? "keep-stats") as BnMode;
    if (bnMode !== "keep-stats" && bnMode !== "fold") {
      throw new Error(`unknown --bn-mode ${bnMode}`);
    }
    const { model } = loadCheckpoint(checkpoint);
    const { maxDeviation } = exportModel(model, bnMode, out);
    console.log(`exported; verification max deviation ${maxDeviation.toExponential(2)}`);
    return 0;
  }
  if (command === "gen-data") {
    const out = required(flags, "out");
    const count = Number(flags.get("count") ?? "256");
    const seed = Number(flags.get("seed") ?? "1");
    const data = makeToyDataset(count, seed);
    writeDataset(data.samples, data.sampleShape, data.labels, out);
    console.log(`wrote ${count} samples`);
    return 0;
  }
  console.error("usage: train-toy | export | gen-data (see source header)");
  return 1;
}

main(process.argv.slice(2))
  .then((code) => {
    process.exitCode = code;
  })
  .catch((err) => {
    console.error(`error: ${err.message ?? err}`);
    process.exitCode = 1;
  });
