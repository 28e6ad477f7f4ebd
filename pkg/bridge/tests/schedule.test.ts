import * as assert from "node:assert/strict";
import * as fs from "node:fs";
import * as path from "node:path";
import { test } from "node:test";

import { FLOAT_FIELDS, loadSchedule, parseSchedule, ScheduleParseError } from "../src/schedule";

const FIXTURES = path.join(__dirname, "..", "..", "tests", "fixtures");
const SCHEDULE_PATH = path.join(FIXTURES, "schedule_nqm.txt");
const LOOKUP_PATH = path.join(FIXTURES, "lookup.json");

function fixtureText(): string {
  return fs.readFileSync(SCHEDULE_PATH, "utf-8");
}

test("parses a schedule written by the producing side", () => {
  const schedule = loadSchedule(SCHEDULE_PATH);
  assert.equal(schedule.version, 1);
  assert.equal(schedule.taskSeed, 31);
  assert.equal(schedule.taskFamily, "nqm");
  assert.equal(schedule.records.length, 8);
  assert.equal(schedule.records[0].progress, 0);
  assert.equal(schedule.records[0].hypers.denominator_mode, "adamax");
  assert.equal(schedule.records[0].hypers.use_lamb_trust, true);
});

test("lookup agrees exactly with the producing side's own replay lookup", () => {
  const schedule = loadSchedule(SCHEDULE_PATH);
  const expected = JSON.parse(fs.readFileSync(LOOKUP_PATH, "utf-8"));
  for (const row of expected) {
    const values = schedule.valueAt(row.progress);
    for (const name of FLOAT_FIELDS) {
      // repr round trip: the doubles must be bit-identical, not just close
      assert.equal((values as any)[name], row[name], `${name} at ${row.progress}`);
    }
    assert.equal(values.denominator_mode, row.denominator_mode);
    assert.equal(values.use_lamb_trust, row.use_lamb_trust);
  }
});

test("piecewise-constant semantics", () => {
  const schedule = loadSchedule(SCHEDULE_PATH);
  const first = schedule.records[0].hypers;
  const second = schedule.records[1].hypers;
  assert.deepEqual(schedule.valueAt(0), first);
  assert.deepEqual(schedule.valueAt(0.1249999), first);
  assert.deepEqual(schedule.valueAt(0.125), second);
  assert.deepEqual(schedule.valueAt(1), schedule.records[7].hypers);
});

test("progress outside [0, 1] is rejected", () => {
  const schedule = loadSchedule(SCHEDULE_PATH);
  assert.throws(() => schedule.valueAt(-0.01), RangeError);
  assert.throws(() => schedule.valueAt(1.01), RangeError);
});

test("version mismatch is a hard error", () => {
  const text = fixtureText().replace("version: 1", "version: 3");
  assert.throws(() => parseSchedule(text), /unsupported schedule version 3/);
});

test("missing version header names the field", () => {
  const text = fixtureText()
    .split("\n")
    .filter((l) => !l.startsWith("version:"))
    .join("\n");
  assert.throws(() => parseSchedule(text), /missing header field: version/);
});

test("corrupted record names the line and field", () => {
  const lines = fixtureText().split("\n");
  const idx = lines.findIndex((l) => l.startsWith("record:"));
  lines[idx] = "record: 0.0 oops";
  try {
    parseSchedule(lines.join("\n"));
    assert.fail("expected a parse error");
  } catch (err) {
    assert.ok(err instanceof ScheduleParseError);
    assert.equal((err as ScheduleParseError).lineNo, idx + 1);
  }
});

test("empty record list is rejected", () => {
  const text = fixtureText()
    .split("\n")
    .filter((l) => !l.startsWith("record:"))
    .join("\n");
  assert.throws(() => parseSchedule(text), /no records/);
});

test("unsupported column set is rejected", () => {
  const text = fixtureText().replace("columns: progress", "columns: whatever");
  assert.throws(() => parseSchedule(text), /column/);
});

test("events are tolerated and preserved", () => {
  const text = fixtureText() + "event: 3 4\n";
  const schedule = parseSchedule(text);
  assert.deepEqual(schedule.events, [[3, 4]]);
});
