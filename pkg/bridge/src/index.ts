export {
  EXPECTED_COLUMNS,
  FLOAT_FIELDS,
  HyperValues,
  Schedule,
  ScheduleParseError,
  ScheduleRecord,
  loadSchedule,
  parseSchedule,
} from "./schedule";
export {
  BindingEntry,
  BridgeBinding,
  HostField,
  HostParamGroup,
  applyAtProgress,
} from "./binding";
export { HostMlp, defaultParamGroup, makeRng } from "./host";
export { CsvDataset, loadCsvDataset } from "./dataset";
export {
  DemoOptions,
  DemoResult,
  demoTrain,
  runScheduledTraining,
  writeMetricsCsv,
} from "./demo";
