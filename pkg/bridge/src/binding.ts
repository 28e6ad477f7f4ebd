/**
 * Binding between schedule columns and a host optimizer's parameter group.
 *
 * The schedule stores moving-average rates as 1 - beta; hosts want beta.
 * That conversion happens here and only here.  Every schedule column is
 * either bound to a host field or reported in the unmapped list: nothing is
 * dropped silently.
 */

import { FLOAT_FIELDS, HyperValues, Schedule } from "./schedule";

/** The mutable hyperparameter surface of a host optimizer param group. */
export interface HostParamGroup {
  lr: number;
  beta1: number;
  beta2: number;
  eps: number;
  weightDecay: number;
}

export type HostField = keyof HostParamGroup;

export interface BindingEntry {
  scheduleName: string;
  field: HostField;
  /** "direct" copies the value; "one-minus" converts a 1-beta rate to beta. */
  transform: "direct" | "one-minus";
}

export class BridgeBinding {
  constructor(public readonly entries: BindingEntry[]) {
    const seen = new Set<string>();
    for (const entry of entries) {
      if (seen.has(entry.scheduleName)) {
        throw new Error(`duplicate binding for ${entry.scheduleName}`);
      }
      seen.add(entry.scheduleName);
    }
  }

  /** The standard four-knob binding: lr, epsilon, beta2, weight decay. */
  static standard(includeBeta1 = false): BridgeBinding {
    const entries: BindingEntry[] = [
      { scheduleName: "learning_rate", field: "lr", transform: "direct" },
      { scheduleName: "epsilon", field: "eps", transform: "direct" },
      { scheduleName: "one_minus_beta2", field: "beta2", transform: "one-minus" },
      { scheduleName: "weight_decay", field: "weightDecay", transform: "direct" },
    ];
    if (includeBeta1) {
      entries.push({ scheduleName: "one_minus_beta1", field: "beta1", transform: "one-minus" });
    }
    return new BridgeBinding(entries);
  }

  /** Schedule columns this binding does not consume (warned, never silent). */
  unmappedNames(schedule: Schedule): string[] {
    const mapped = new Set(this.entries.map((e) => e.scheduleName));
    return schedule.columnNames().filter((name) => !mapped.has(name));
  }

  /**
   * Checks every mapped name against the schedule header and returns the
   * warning lines for unmapped columns.  Throws on a name the schedule
   * does not carry.
   */
  validate(schedule: Schedule): string[] {
    const available = new Set(schedule.columnNames());
    for (const entry of this.entries) {
      if (!available.has(entry.scheduleName)) {
        throw new Error(
          `binding refers to ${entry.scheduleName}, which the schedule does not carry`,
        );
      }
    }
    return this.unmappedNames(schedule).map(
      (name) => `warning: schedule column ${name} is not bound to any host field`,
    );
  }

  applyValues(values: HyperValues, group: HostParamGroup): void {
    for (const entry of this.entries) {
      const raw = (values as any)[entry.scheduleName] as number;
      group[entry.field] = entry.transform === "one-minus" ? 1 - raw : raw;
    }
  }
}

/**
 * Piecewise-constant application: set the host group's bound fields to the
 * schedule values active at `progress`.  Idempotent at fixed progress.
 */
export function applyAtProgress(
  schedule: Schedule,
  binding: BridgeBinding,
  group: HostParamGroup,
  progress: number,
): HyperValues {
  if (!(progress >= 0 && progress <= 1)) {
    throw new RangeError(`progress must be in [0, 1], got ${progress}`);
  }
  const values = schedule.valueAt(progress);
  binding.applyValues(values, group);
  return values;
}
