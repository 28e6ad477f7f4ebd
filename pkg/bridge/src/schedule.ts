/**
 * Parser for exported hyperparameter schedule files.
 *
 * The format is line-oriented text produced by the training side: `key:
 * value` header lines, one `record:` line per outer step (progress plus the
 * full hyperparameter vector), and optional `event:` lines for checkpoint
 * restarts (which a bridge has no use for, but must tolerate).  Floats are
 * printed with shortest round-trip precision, so parsing them back yields
 * bit-identical doubles.  Moving-average rates arrive in the 1 - beta
 * convention; conversion to the host convention happens in the binding, not
 * here.
 */

import * as fs from "fs";

export const SCHEDULE_VERSION = 1;

export const FLOAT_FIELDS = [
  "learning_rate",
  "one_minus_beta1",
  "one_minus_beta2",
  "epsilon",
  "weight_decay",
  "grad_clip_fraction",
  "one_minus_beta_gradclip",
  "lamb_min_trust",
  "one_minus_beta_lamb",
] as const;

export type FloatField = (typeof FLOAT_FIELDS)[number];

export const EXPECTED_COLUMNS = [
  "progress",
  ...FLOAT_FIELDS,
  "denominator_mode",
  "use_lamb_trust",
];

export interface HyperValues {
  learning_rate: number;
  one_minus_beta1: number;
  one_minus_beta2: number;
  epsilon: number;
  weight_decay: number;
  grad_clip_fraction: number;
  one_minus_beta_gradclip: number;
  lamb_min_trust: number;
  one_minus_beta_lamb: number;
  denominator_mode: string;
  use_lamb_trust: boolean;
}

export interface ScheduleRecord {
  progress: number;
  hypers: HyperValues;
}

export class ScheduleParseError extends Error {
  constructor(
    public readonly lineNo: number,
    message: string,
  ) {
    super(`line ${lineNo}: ${message}`);
    this.name = "ScheduleParseError";
  }
}

export class Schedule {
  constructor(
    public readonly records: ScheduleRecord[],
    public readonly events: Array<[number, number]>,
    public readonly version: number,
    public readonly optimizer: string,
    public readonly policyHash: string,
    public readonly taskSeed: number,
    public readonly taskFamily: string,
  ) {
    if (records.length === 0) {
      throw new ScheduleParseError(0, "schedule has no records");
    }
    if (records[0].progress !== 0) {
      throw new ScheduleParseError(0, "the first record must be at progress 0");
    }
    let last = -1;
    for (const rec of records) {
      if (!(rec.progress >= 0 && rec.progress <= 1)) {
        throw new ScheduleParseError(0, `record progress ${rec.progress} outside [0, 1]`);
      }
      if (rec.progress <= last) {
        throw new ScheduleParseError(0, "record progress must increase strictly");
      }
      last = rec.progress;
    }
  }

  /** Piecewise-constant lookup: the last record at or before `progress`. */
  valueAt(progress: number): HyperValues {
    if (!(progress >= 0 && progress <= 1)) {
      throw new RangeError(`progress must be in [0, 1], got ${progress}`);
    }
    let active = this.records[0];
    for (const rec of this.records) {
      if (rec.progress <= progress) {
        active = rec;
      } else {
        break;
      }
    }
    return { ...active.hypers };
  }

  /** Every hyperparameter column carried by this schedule. */
  columnNames(): string[] {
    return [...FLOAT_FIELDS, "denominator_mode", "use_lamb_trust"];
  }
}

function parseFloatStrict(text: string, lineNo: number, field: string): number {
  const value = Number(text);
  if (!Number.isFinite(value)) {
    throw new ScheduleParseError(lineNo, `bad float for ${field}: ${JSON.stringify(text)}`);
  }
  return value;
}

export function parseSchedule(text: string): Schedule {
  const header = new Map<string, string>();
  const records: ScheduleRecord[] = [];
  const events: Array<[number, number]> = [];
  let sawColumns = false;

  const lines = text.split(/\r?\n/);
  for (let i = 0; i < lines.length; i++) {
    const lineNo = i + 1;
    const line = lines[i].trim();
    if (line === "" || line.startsWith("#")) continue;
    const sep = line.indexOf(":");
    if (sep < 0) {
      throw new ScheduleParseError(lineNo, `expected 'key: value', got ${JSON.stringify(line)}`);
    }
    const key = line.slice(0, sep).trim();
    const rest = line.slice(sep + 1).trim();

    if (key === "columns") {
      const columns = rest.split(/\s+/);
      if (
        columns.length !== EXPECTED_COLUMNS.length ||
        columns.some((c, j) => c !== EXPECTED_COLUMNS[j])
      ) {
        throw new ScheduleParseError(lineNo, `unsupported column set [${columns.join(", ")}]`);
      }
      sawColumns = true;
    } else if (key === "record") {
      if (!sawColumns) {
        throw new ScheduleParseError(lineNo, "record before columns header");
      }
      const parts = rest.split(/\s+/);
      if (parts.length !== EXPECTED_COLUMNS.length) {
        throw new ScheduleParseError(
          lineNo,
          `record has ${parts.length} fields, expected ${EXPECTED_COLUMNS.length}`,
        );
      }
      const progress = parseFloatStrict(parts[0], lineNo, "progress");
      const hypers = {} as HyperValues;
      FLOAT_FIELDS.forEach((name, j) => {
        (hypers as any)[name] = parseFloatStrict(parts[1 + j], lineNo, name);
      });
      const mode = parts[parts.length - 2];
      if (mode !== "adam" && mode !== "adamax") {
        throw new ScheduleParseError(lineNo, `bad denominator_mode ${JSON.stringify(mode)}`);
      }
      const flag = parts[parts.length - 1];
      if (flag !== "true" && flag !== "false") {
        throw new ScheduleParseError(lineNo, `bad use_lamb_trust flag ${JSON.stringify(flag)}`);
      }
      hypers.denominator_mode = mode;
      hypers.use_lamb_trust = flag === "true";
      records.push({ progress, hypers });
    } else if (key === "event") {
      const parts = rest.split(/\s+/);
      if (parts.length !== 2) {
        throw new ScheduleParseError(lineNo, "event needs '<outer index> <choice>'");
      }
      const outer = Number(parts[0]);
      const choice = Number(parts[1]);
      if (!Number.isInteger(outer) || !Number.isInteger(choice)) {
        throw new ScheduleParseError(lineNo, `bad event fields [${parts.join(", ")}]`);
      }
      events.push([outer, choice]);
    } else {
      header.set(key, rest);
    }
  }

  const versionText = header.get("version");
  if (versionText === undefined) {
    throw new ScheduleParseError(0, "missing header field: version");
  }
  const version = Number(versionText);
  if (!Number.isInteger(version)) {
    throw new ScheduleParseError(0, `bad version ${JSON.stringify(versionText)}`);
  }
  if (version !== SCHEDULE_VERSION) {
    throw new ScheduleParseError(0, `unsupported schedule version ${version}`);
  }
  const seedText = header.get("task_seed") ?? "0";
  const taskSeed = Number(seedText);
  if (!Number.isInteger(taskSeed)) {
    throw new ScheduleParseError(0, `bad task_seed ${JSON.stringify(seedText)}`);
  }
  const policy = header.get("policy") ?? "none";
  const family = header.get("task_family") ?? "none";
  return new Schedule(
    records,
    events,
    version,
    header.get("optimizer") ?? "ciao",
    policy === "none" ? "" : policy,
    taskSeed,
    family === "none" ? "" : family,
  );
}

export function loadSchedule(path: string): Schedule {
  if (!fs.existsSync(path)) {
    throw new Error(`schedule file not found: ${path}`);
  }
  return parseSchedule(fs.readFileSync(path, "utf-8"));
}
