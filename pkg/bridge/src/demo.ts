/**
 * Demo trainer: a small host model trained under an exported schedule.
 *
 * The schedule's bound hyperparameters are pushed into the host optimizer
 * at every epoch boundary (or every step, the caller's choice); the
 * read-back audit log records exactly what the host saw at each boundary.
 */

import * as fs from "fs";

import { applyAtProgress, BridgeBinding, HostParamGroup } from "./binding";
import { CsvDataset, loadCsvDataset } from "./dataset";
import { HostMlp, makeRng } from "./host";
import { loadSchedule, Schedule } from "./schedule";

export interface DemoOptions {
  datasetPath: string;
  schedulePath: string;
  epochs: number;
  outPath?: string;
  applyPer?: "epoch" | "step";
  hidden?: number;
  batchSize?: number;
  seed?: number;
}

export interface MetricsRow {
  epoch: number;
  loss: number;
  lr: number;
  beta1: number;
  beta2: number;
  eps: number;
  weightDecay: number;
}

export interface AuditEntry {
  progress: number;
  group: HostParamGroup;
}

export interface DemoResult {
  rows: MetricsRow[];
  audit: AuditEntry[];
  warnings: string[];
  finalLoss: number;
}

function shuffled(n: number, rng: () => number): number[] {
  const idx = Array.from({ length: n }, (_, i) => i);
  for (let i = n - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    [idx[i], idx[j]] = [idx[j], idx[i]];
  }
  return idx;
}

export function runScheduledTraining(
  dataset: CsvDataset,
  schedule: Schedule | null,
  binding: BridgeBinding,
  options: { epochs: number; hidden: number; batchSize: number; seed: number; applyPer: "epoch" | "step" },
): DemoResult {
  const warnings = schedule ? binding.validate(schedule) : [];
  const model = new HostMlp(dataset.nFeatures, options.hidden, dataset.nClasses, options.seed);
  const rng = makeRng(options.seed + 1);
  const rows: MetricsRow[] = [];
  const audit: AuditEntry[] = [];
  const n = dataset.x.length;
  const stepsPerEpoch = Math.max(1, Math.floor(n / options.batchSize));
  const totalSteps = options.epochs * stepsPerEpoch;
  let step = 0;

  for (let epoch = 0; epoch < options.epochs; epoch++) {
    if (schedule) {
      const progress = options.epochs > 1 ? epoch / options.epochs : 0;
      if (options.applyPer === "epoch") {
        applyAtProgress(schedule, binding, model.group, progress);
        audit.push({ progress, group: { ...model.group } });
      }
    }
    const order = shuffled(n, rng);
    let epochLoss = 0;
    for (let b = 0; b < stepsPerEpoch; b++) {
      if (schedule && options.applyPer === "step") {
        const progress = totalSteps > 1 ? step / totalSteps : 0;
        applyAtProgress(schedule, binding, model.group, progress);
        audit.push({ progress, group: { ...model.group } });
      }
      const batchIdx = order.slice(b * options.batchSize, (b + 1) * options.batchSize);
      const x = batchIdx.map((i) => dataset.x[i]);
      const labels = batchIdx.map((i) => dataset.labels[i]);
      const { loss, grads } = model.lossAndGrads(x, labels);
      model.adamwStep(grads);
      epochLoss += loss / stepsPerEpoch;
      step += 1;
    }
    rows.push({
      epoch,
      loss: epochLoss,
      lr: model.group.lr,
      beta1: model.group.beta1,
      beta2: model.group.beta2,
      eps: model.group.eps,
      weightDecay: model.group.weightDecay,
    });
  }
  return {
    rows,
    audit,
    warnings,
    finalLoss: model.meanLoss(dataset.x, dataset.labels),
  };
}

export function writeMetricsCsv(path: string, rows: MetricsRow[]): void {
  const header = "epoch,loss,lr,beta1,beta2,eps,weight_decay";
  const lines = rows.map(
    (r) =>
      `${r.epoch},${r.loss},${r.lr},${r.beta1},${r.beta2},${r.eps},${r.weightDecay}`,
  );
  fs.writeFileSync(path, [header, ...lines].join("\n") + "\n");
}

export function demoTrain(options: DemoOptions): DemoResult {
  const dataset = loadCsvDataset(options.datasetPath);
  const schedule = loadSchedule(options.schedulePath);
  const binding = BridgeBinding.standard();
  const result = runScheduledTraining(dataset, schedule, binding, {
    epochs: options.epochs,
    hidden: options.hidden ?? 16,
    batchSize: options.batchSize ?? 16,
    seed: options.seed ?? 0,
    applyPer: options.applyPer ?? "epoch",
  });
  for (const warning of result.warnings) {
    process.stderr.write(warning + "\n");
  }
  if (options.outPath) {
    writeMetricsCsv(options.outPath, result.rows);
  }
  return result;
}
