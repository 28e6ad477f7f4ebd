#!/usr/bin/env node
/**
 * bridge run --schedule <file> --dataset <path> --epochs <n> --out <csv>
 *
 * Trains the demo host model under an exported hyperparameter schedule and
 * writes a loss/hyperparameter trace as CSV.
 */

import { demoTrain } from "./demo";

const USAGE =
  "usage: bridge run --schedule <file> --dataset <path> --epochs <n> --out <csv> " +
  "[--apply-per epoch|step] [--hidden <n>] [--batch <n>] [--seed <n>]";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new UsageError(`bad argument ${key}`);
    }
    out.set(key.slice(2), argv[i + 1]);
  }
  return out;
}

class UsageError extends Error {}

export function main(argv: string[]): number {
  try {
    if (argv.length === 0 || argv[0] !== "run") {
      throw new UsageError(`unknown subcommand ${argv[0] ?? "(none)"}`);
    }
    const args = parseArgs(argv.slice(1));
    for (const required of ["schedule", "dataset", "epochs", "out"]) {
      if (!args.has(required)) {
        throw new UsageError(`missing --${required}`);
      }
    }
    const applyPer = args.get("apply-per") ?? "epoch";
    if (applyPer !== "epoch" && applyPer !== "step") {
      throw new UsageError("--apply-per must be 'epoch' or 'step'");
    }
    const epochs = Number(args.get("epochs"));
    if (!Number.isInteger(epochs) || epochs < 1) {
      throw new UsageError("--epochs must be a positive integer");
    }
    const result = demoTrain({
      datasetPath: args.get("dataset")!,
      schedulePath: args.get("schedule")!,
      epochs,
      outPath: args.get("out")!,
      applyPer,
      hidden: args.has("hidden") ? Number(args.get("hidden")) : undefined,
      batchSize: args.has("batch") ? Number(args.get("batch")) : undefined,
      seed: args.has("seed") ? Number(args.get("seed")) : undefined,
    });
    process.stdout.write(
      JSON.stringify({ finalLoss: result.finalLoss, epochs: result.rows.length }) + "\n",
    );
    return 0;
  } catch (err) {
    if (err instanceof UsageError) {
      process.stderr.write(`${err.message}\n${USAGE}\n`);
      return 2;
    }
    process.stderr.write(
      JSON.stringify({ error: (err as Error).name, message: (err as Error).message }) + "\n",
    );
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
