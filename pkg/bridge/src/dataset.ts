/**
 * CSV dataset loader for the demo trainer: one row per sample, float
 * features followed by an integer class label in the last column.
 */

import * as fs from "fs";

export interface CsvDataset {
  x: number[][];
  labels: number[];
  nFeatures: number;
  nClasses: number;
}

export function loadCsvDataset(path: string): CsvDataset {
  if (!fs.existsSync(path)) {
    throw new Error(`dataset file not found: ${path}`);
  }
  const x: number[][] = [];
  const labels: number[] = [];
  const lines = fs.readFileSync(path, "utf-8").split(/\r?\n/);
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "") continue;
    const parts = line.split(",");
    if (parts.length < 2) {
      throw new Error(`${path}: line ${i + 1}: need features plus a label`);
    }
    const row = parts.slice(0, -1).map(Number);
    const label = Number(parts[parts.length - 1]);
    if (row.some((v) => !Number.isFinite(v)) || !Number.isInteger(label) || label < 0) {
      throw new Error(`${path}: line ${i + 1}: malformed row`);
    }
    x.push(row);
    labels.push(label);
  }
  if (x.length === 0) {
    throw new Error(`${path}: dataset is empty`);
  }
  const nFeatures = x[0].length;
  if (x.some((row) => row.length !== nFeatures)) {
    throw new Error(`${path}: inconsistent feature counts`);
  }
  return { x, labels, nFeatures, nClasses: Math.max(...labels) + 1 };
}
