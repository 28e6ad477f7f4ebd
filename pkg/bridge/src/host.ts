/**
 * A deliberately small host "framework": one hidden-layer MLP classifier
 * with softmax cross-entropy, trained by AdamW.  Everything is seeded and
 * deterministic so paired runs can be compared exactly.  The optimizer's
 * hyperparameters live on a mutable param group — the surface the bridge
 * drives.
 */

import { HostParamGroup } from "./binding";

/** mulberry32: tiny deterministic PRNG, good enough for init and batching. */
export function makeRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function defaultParamGroup(): HostParamGroup {
  return { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weightDecay: 1e-2 };
}

class Tensor2 {
  data: Float64Array;
  constructor(
    public rows: number,
    public cols: number,
    init?: Float64Array,
  ) {
    this.data = init ?? new Float64Array(rows * cols);
  }
  get(i: number, j: number): number {
    return this.data[i * this.cols + j];
  }
  set(i: number, j: number, v: number): void {
    this.data[i * this.cols + j] = v;
  }
}

interface AdamSlot {
  m: Float64Array;
  v: Float64Array;
}

export class HostMlp {
  w1: Tensor2;
  b1: Float64Array;
  w2: Tensor2;
  b2: Float64Array;
  group: HostParamGroup;
  private slots: Map<string, AdamSlot> = new Map();
  private stepCount = 0;

  constructor(
    public inputDim: number,
    public hiddenDim: number,
    public nClasses: number,
    seed: number,
    group?: HostParamGroup,
  ) {
    const rng = makeRng(seed);
    const limit1 = Math.sqrt(6 / (inputDim + hiddenDim));
    const limit2 = Math.sqrt(6 / (hiddenDim + nClasses));
    this.w1 = new Tensor2(inputDim, hiddenDim);
    this.w2 = new Tensor2(hiddenDim, nClasses);
    for (let i = 0; i < this.w1.data.length; i++) {
      this.w1.data[i] = (2 * rng() - 1) * limit1;
    }
    for (let i = 0; i < this.w2.data.length; i++) {
      this.w2.data[i] = (2 * rng() - 1) * limit2;
    }
    this.b1 = new Float64Array(hiddenDim);
    this.b2 = new Float64Array(nClasses);
    this.group = group ?? defaultParamGroup();
    for (const [name, param] of this.namedParams()) {
      this.slots.set(name, {
        m: new Float64Array(param.length),
        v: new Float64Array(param.length),
      });
    }
  }

  namedParams(): Array<[string, Float64Array]> {
    return [
      ["w1", this.w1.data],
      ["b1", this.b1],
      ["w2", this.w2.data],
      ["b2", this.b2],
    ];
  }

  /** Mean cross-entropy over the batch, plus gradients; one fused pass. */
  lossAndGrads(
    x: number[][],
    labels: number[],
  ): { loss: number; grads: Map<string, Float64Array> } {
    const n = x.length;
    const h = this.hiddenDim;
    const k = this.nClasses;
    const hidden: Float64Array[] = [];
    const probs: Float64Array[] = [];
    let loss = 0;

    for (let s = 0; s < n; s++) {
      const z1 = new Float64Array(h);
      for (let j = 0; j < h; j++) {
        let acc = this.b1[j];
        for (let i = 0; i < this.inputDim; i++) {
          acc += x[s][i] * this.w1.get(i, j);
        }
        z1[j] = Math.tanh(acc);
      }
      hidden.push(z1);
      const logits = new Float64Array(k);
      let maxLogit = -Infinity;
      for (let c = 0; c < k; c++) {
        let acc = this.b2[c];
        for (let j = 0; j < h; j++) {
          acc += z1[j] * this.w2.get(j, c);
        }
        logits[c] = acc;
        maxLogit = Math.max(maxLogit, acc);
      }
      let z = 0;
      for (let c = 0; c < k; c++) z += Math.exp(logits[c] - maxLogit);
      const logZ = Math.log(z) + maxLogit;
      loss += (logZ - logits[labels[s]]) / n;
      const p = new Float64Array(k);
      for (let c = 0; c < k; c++) p[c] = Math.exp(logits[c] - logZ);
      probs.push(p);
    }

    const gW1 = new Float64Array(this.w1.data.length);
    const gB1 = new Float64Array(h);
    const gW2 = new Float64Array(this.w2.data.length);
    const gB2 = new Float64Array(k);
    for (let s = 0; s < n; s++) {
      const dLogits = new Float64Array(k);
      for (let c = 0; c < k; c++) {
        dLogits[c] = (probs[s][c] - (labels[s] === c ? 1 : 0)) / n;
      }
      const dHidden = new Float64Array(h);
      for (let j = 0; j < h; j++) {
        let acc = 0;
        for (let c = 0; c < k; c++) {
          gW2[j * k + c] += hidden[s][j] * dLogits[c];
          acc += this.w2.get(j, c) * dLogits[c];
        }
        dHidden[j] = acc * (1 - hidden[s][j] * hidden[s][j]);
        gB1[j] += dHidden[j];
      }
      for (let c = 0; c < k; c++) gB2[c] += dLogits[c];
      for (let i = 0; i < this.inputDim; i++) {
        for (let j = 0; j < h; j++) {
          gW1[i * h + j] += x[s][i] * dHidden[j];
        }
      }
    }
    return {
      loss,
      grads: new Map([
        ["w1", gW1],
        ["b1", gB1],
        ["w2", gW2],
        ["b2", gB2],
      ]),
    };
  }

  /** Decoupled-weight-decay adaptive step using the live param group. */
  adamwStep(grads: Map<string, Float64Array>): void {
    this.stepCount += 1;
    const t = this.stepCount;
    const { lr, beta1, beta2, eps, weightDecay } = this.group;
    const bc1 = 1 - Math.pow(beta1, t);
    const bc2 = 1 - Math.pow(beta2, t);
    for (const [name, param] of this.namedParams()) {
      const g = grads.get(name)!;
      const slot = this.slots.get(name)!;
      for (let i = 0; i < param.length; i++) {
        slot.m[i] = beta1 * slot.m[i] + (1 - beta1) * g[i];
        slot.v[i] = beta2 * slot.v[i] + (1 - beta2) * g[i] * g[i];
        const mHat = slot.m[i] / bc1;
        const vHat = slot.v[i] / bc2;
        param[i] -= lr * (mHat / (Math.sqrt(vHat) + eps) + weightDecay * param[i]);
      }
    }
  }

  meanLoss(x: number[][], labels: number[]): number {
    return this.lossAndGrads(x, labels).loss;
  }
}
