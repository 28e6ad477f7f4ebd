"""Replayable hyperparameter-schedule files.

A schedule is a piecewise-constant trajectory of the full hyperparameter
vector keyed by training progress, plus any checkpoint/restart events the
producing run took.  The format is line-oriented text: ``key: value``
header lines, one ``record:`` line per outer step, and optional ``event:``
lines.  Floats are written with ``repr`` so parsing returns bit-identical
values.  Moving-average rates stay in the 1 - beta convention; consumers
convert at their own boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .actions import HYPER_BOUNDS
from .inner_opt import HYPER_FLOAT_FIELDS, HyperParams

SCHEDULE_VERSION = 1
MAGIC_LINE = "# hyperlab schedule"

COLUMNS = ("progress",) + HYPER_FLOAT_FIELDS + ("denominator_mode", "use_lamb_trust")


class ScheduleParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class ScheduleRecord:
    progress: float
    hypers: HyperParams


@dataclass
class ScheduleFile:
    records: list[ScheduleRecord]
    events: list[tuple[int, int]] = field(default_factory=list)  # (outer index, choice)
    version: int = SCHEDULE_VERSION
    optimizer: str = "ciao"
    policy_hash: str = ""
    task_seed: int = 0
    task_family: str = ""

    def __post_init__(self):
        if not self.records:
            raise ValueError("a schedule needs at least one record")
        if self.records[0].progress != 0.0:
            raise ValueError("the first schedule record must be at progress 0")
        last = -1.0
        for rec in self.records:
            if not 0.0 <= rec.progress <= 1.0:
                raise ValueError(f"record progress {rec.progress} outside [0, 1]")
            if rec.progress <= last:
                raise ValueError("record progress must increase strictly")
            last = rec.progress
            for name, (lo, hi) in HYPER_BOUNDS.items():
                value = getattr(rec.hypers, name)
                if not lo <= value <= hi:
                    raise ValueError(
                        f"record at progress {rec.progress}: {name}={value} "
                        f"violates bounds [{lo}, {hi}]"
                    )

    def value_at(self, progress: float) -> HyperParams:
        """Piecewise-constant lookup: the last record at or before progress."""
        if not 0.0 <= progress <= 1.0:
            raise ValueError(f"progress must be in [0, 1], got {progress}")
        active = self.records[0]
        for rec in self.records:
            if rec.progress <= progress:
                active = rec
            else:
                break
        return active.hypers.copy()

    def events_at(self, outer_index: int) -> list[int]:
        return [choice for idx, choice in self.events if idx == outer_index]

    def serialize(self) -> str:
        lines = [
            f"{MAGIC_LINE} v{self.version}",
            f"version: {self.version}",
            f"optimizer: {self.optimizer}",
            f"policy: {self.policy_hash or 'none'}",
            f"task_seed: {self.task_seed}",
            f"task_family: {self.task_family or 'none'}",
            "columns: " + " ".join(COLUMNS),
        ]
        for rec in self.records:
            h = rec.hypers
            values = [repr(rec.progress)]
            values += [repr(float(getattr(h, name))) for name in HYPER_FLOAT_FIELDS]
            values.append(h.denominator_mode)
            values.append("true" if h.use_lamb_trust else "false")
            lines.append("record: " + " ".join(values))
        for outer_index, choice in self.events:
            lines.append(f"event: {outer_index} {choice}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.serialize())

    @classmethod
    def parse(cls, text: str) -> "ScheduleFile":
        header: dict[str, str] = {}
        records: list[ScheduleRecord] = []
        events: list[tuple[int, int]] = []
        columns: list[str] | None = None
        for line_no, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise ScheduleParseError(line_no, f"expected 'key: value', got {line!r}")
            key, _, rest = line.partition(":")
            key, rest = key.strip(), rest.strip()
            if key == "columns":
                columns = rest.split()
                if tuple(columns) != COLUMNS:
                    raise ScheduleParseError(
                        line_no,
                        f"unsupported column set {columns} (expected {list(COLUMNS)})",
                    )
            elif key == "record":
                if columns is None:
                    raise ScheduleParseError(line_no, "record before columns header")
                parts = rest.split()
                if len(parts) != len(COLUMNS):
                    raise ScheduleParseError(
                        line_no,
                        f"record has {len(parts)} fields, expected {len(COLUMNS)}",
                    )
                try:
                    progress = float(parts[0])
                    floats = [float(p) for p in parts[1 : 1 + len(HYPER_FLOAT_FIELDS)]]
                except ValueError as exc:
                    raise ScheduleParseError(line_no, f"bad float in record: {exc}") from None
                mode = parts[-2]
                if mode not in ("adam", "adamax"):
                    raise ScheduleParseError(line_no, f"bad denominator_mode {mode!r}")
                flag = parts[-1]
                if flag not in ("true", "false"):
                    raise ScheduleParseError(line_no, f"bad use_lamb_trust flag {flag!r}")
                hypers = HyperParams(
                    **dict(zip(HYPER_FLOAT_FIELDS, floats)),
                    denominator_mode=mode,
                    use_lamb_trust=flag == "true",
                )
                records.append(ScheduleRecord(progress=progress, hypers=hypers))
            elif key == "event":
                parts = rest.split()
                if len(parts) != 2:
                    raise ScheduleParseError(line_no, "event needs '<outer index> <choice>'")
                try:
                    events.append((int(parts[0]), int(parts[1])))
                except ValueError:
                    raise ScheduleParseError(line_no, f"bad event fields {parts!r}") from None
            else:
                header[key] = rest

        if "version" not in header:
            raise ScheduleParseError(0, "missing header field: version")
        try:
            version = int(header["version"])
        except ValueError:
            raise ScheduleParseError(0, f"bad version {header['version']!r}") from None
        if version != SCHEDULE_VERSION:
            raise ScheduleParseError(0, f"unsupported schedule version {version}")
        if not records:
            raise ScheduleParseError(0, "schedule has no records")
        try:
            task_seed = int(header.get("task_seed", "0"))
        except ValueError:
            raise ScheduleParseError(0, f"bad task_seed {header['task_seed']!r}") from None
        policy_hash = header.get("policy", "none")
        family = header.get("task_family", "none")
        try:
            return cls(
                records=records,
                events=events,
                version=version,
                optimizer=header.get("optimizer", "ciao"),
                policy_hash="" if policy_hash == "none" else policy_hash,
                task_seed=task_seed,
                task_family="" if family == "none" else family,
            )
        except ValueError as exc:
            raise ScheduleParseError(0, str(exc)) from None

    @classmethod
    def read(cls, path) -> "ScheduleFile":
        with open(path) as f:
            return cls.parse(f.read())
