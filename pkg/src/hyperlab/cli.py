"""Command-line front end: train, eval, run, export-schedule, replay.

Outputs are deterministic given the seed (floats are written with repr and
nothing timestamps the files), so identical invocations produce
byte-identical artifacts.  Failures print a machine-readable JSON error
record to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .actions import apply_initial_noise, sample_initial_noise
from .harness import (
    EpisodeConfig,
    EpisodeResult,
    OuterTrainingConfig,
    PolicyDriver,
    StaticDriver,
    evaluate_speedup_fraction,
    export_schedule,
    replay_schedule,
    run_episode,
    train_outer,
)
from .inner_opt import HYPER_FLOAT_FIELDS, HyperParams
from .policy import LstmController, PpoConfig
from .schedule_file import ScheduleFile
from .tasks import TaskDistributionConfig, sample_task

CURVE_COLUMNS = (
    ["step", "progress", "train_loss", "valid_loss"]
    + list(HYPER_FLOAT_FIELDS)
    + ["denominator_mode", "use_lamb_trust"]
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def curve_rows_as_dicts(result: EpisodeResult) -> list[dict]:
    rows = []
    for row in result.curve_rows:
        d = {
            "step": row.step,
            "progress": row.progress,
            "train_loss": row.train_loss,
            "valid_loss": row.valid_loss,
        }
        for name in HYPER_FLOAT_FIELDS:
            d[name] = getattr(row.hypers, name)
        d["denominator_mode"] = row.hypers.denominator_mode
        d["use_lamb_trust"] = row.hypers.use_lamb_trust
        rows.append(d)
    return rows


def write_rows(path: str, rows: list[dict], columns: list[str], fmt: str) -> None:
    with open(path, "w") as f:
        if fmt == "csv":
            f.write(",".join(columns) + "\n")
            for row in rows:
                f.write(",".join(_fmt(row[c]) for c in columns) + "\n")
        else:
            json.dump(rows, f, indent=2)
            f.write("\n")


def _filter_fields(cls, d: dict) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return d


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def distribution_from_config(config: dict) -> TaskDistributionConfig:
    d = config.get("distribution", {})
    d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
    return TaskDistributionConfig(**_filter_fields(TaskDistributionConfig, d))


def episode_from_config(config: dict, seed: int, outer_steps: int | None) -> EpisodeConfig:
    d = dict(config.get("episode", {}))
    d["seed"] = seed
    if outer_steps is not None:
        d["outer_steps"] = outer_steps
    return EpisodeConfig(**_filter_fields(EpisodeConfig, d))


def training_from_config(config: dict, seed: int) -> OuterTrainingConfig:
    d = dict(config.get("training", {}))
    d["seed"] = seed
    d["episode"] = episode_from_config(config, seed, None)
    d["distribution"] = distribution_from_config(config)
    d["ppo"] = PpoConfig(**_filter_fields(PpoConfig, config.get("ppo", {})))
    return OuterTrainingConfig(**_filter_fields(OuterTrainingConfig, d))


def _sample_tasks(n: int, seed: int, dist: TaskDistributionConfig):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        task, enc = sample_task(rng, dist)
        out.append((task, enc))
    return out


def _episode_driver(args, controller):
    if controller is not None:
        return PolicyDriver(controller=controller, update_normalizers=False)
    return StaticDriver()


def cmd_run(args) -> int:
    config = load_config(args.config)
    dist = distribution_from_config(config)
    controller = LstmController.load(args.policy) if args.policy else None
    schedule = ScheduleFile.read(args.schedule) if args.schedule else None
    os.makedirs(args.out, exist_ok=True)
    tasks = _sample_tasks(args.tasks, args.seed, dist)
    rng = np.random.default_rng(args.seed + 1)
    summary = []
    for i, (task, _enc) in enumerate(tasks):
        cfg = episode_from_config(config, int(rng.integers(1 << 31)), args.outer_steps)
        if schedule is not None:
            result = replay_schedule(schedule, task, cfg)
        else:
            noise = sample_initial_noise(rng)
            hypers0 = apply_initial_noise(HyperParams(), noise)
            space = controller.space if controller else None
            if space is None:
                from .actions import ActionSpace

                space = ActionSpace.full()
            result = run_episode(
                task, hypers0, _episode_driver(args, controller), cfg, space
            )
        path = os.path.join(args.out, f"curve_{i}.{args.format}")
        write_rows(path, curve_rows_as_dicts(result), CURVE_COLUMNS, args.format)
        summary.append(
            {"task": i, "family": task.family, "final_valid_loss": result.final_valid_loss}
        )
    write_rows(
        os.path.join(args.out, f"summary.{args.format}"),
        summary,
        ["task", "family", "final_valid_loss"],
        args.format,
    )
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    cfg = training_from_config(config, args.seed)
    controller, log = train_outer(cfg)
    os.makedirs(args.out, exist_ok=True)
    controller.save(os.path.join(args.out, "controller.npz"))
    rows = [
        {"iteration": i, "mean_reward": r}
        for i, r in enumerate(log.iteration_rewards)
    ]
    write_rows(
        os.path.join(args.out, f"training_log.{args.format}"),
        rows,
        ["iteration", "mean_reward"],
        args.format,
    )
    with open(os.path.join(args.out, "training_summary.json"), "w") as f:
        json.dump(
            {
                "iterations": len(log.iteration_rewards),
                "baseline_episodes": log.baseline_episodes,
                "policy_episodes": log.policy_episodes,
                "pairing_failures": log.pairing_failures,
                "eval_rounds": log.eval_rounds,
            },
            f,
            indent=2,
        )
        f.write("\n")
    return 0


def cmd_eval(args) -> int:
    if args.tasks <= 0:
        raise ValueError("eval needs a positive --tasks count")
    config = load_config(args.config)
    dist = distribution_from_config(config)
    controller = LstmController.load(args.policy)
    cfg = episode_from_config(config, args.seed, args.outer_steps)
    tasks = [t for t, _ in _sample_tasks(args.tasks, args.seed, dist)]
    report = evaluate_speedup_fraction(controller, tasks, cfg, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "eval_report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
    if args.format == "csv":
        rows = [
            {
                "index": r.index,
                "family": r.family,
                "controller_loss": r.controller_loss,
                "best_baseline_2x": r.best_baseline_2x,
                "best_baseline_1x": r.best_baseline_1x,
                "speedup_2x": r.speedup_2x,
                "speedup_1x": r.speedup_1x,
            }
            for r in report.rows
        ]
        write_rows(
            os.path.join(args.out, "eval_report.csv"),
            rows,
            ["index", "family", "controller_loss", "best_baseline_2x",
             "best_baseline_1x", "speedup_2x", "speedup_1x"],
            "csv",
        )
    print(json.dumps(report.to_dict()["overall"]))
    return 0


def cmd_export_schedule(args) -> int:
    config = load_config(args.config)
    dist = distribution_from_config(config)
    controller = LstmController.load(args.policy)
    rng = np.random.default_rng(args.seed)
    task, _enc = sample_task(rng, dist)
    noise = sample_initial_noise(rng)
    hypers0 = apply_initial_noise(HyperParams(), noise)
    cfg = episode_from_config(config, args.seed, args.outer_steps)
    driver = PolicyDriver(controller=controller, update_normalizers=False)
    result = run_episode(task, hypers0, driver, cfg, controller.space)
    schedule = export_schedule(result, task, policy_hash=controller.feature_layout_hash)
    schedule.task_seed = args.seed  # the sampling seed reconstructs the task
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "schedule.txt")
    schedule.write(path)
    print(json.dumps({"schedule": path, "final_valid_loss": result.final_valid_loss}))
    return 0


def cmd_replay(args) -> int:
    config = load_config(args.config)
    dist = distribution_from_config(config)
    schedule = ScheduleFile.read(args.schedule)
    rng = np.random.default_rng(schedule.task_seed)
    task, _enc = sample_task(rng, dist)
    cfg = episode_from_config(config, schedule.task_seed, args.outer_steps)
    result = replay_schedule(schedule, task, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"replay_curve.{args.format}")
    write_rows(path, curve_rows_as_dicts(result), CURVE_COLUMNS, args.format)
    print(json.dumps({"curve": path, "final_valid_loss": result.final_valid_loss}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperlab",
        description="Learned hyperparameter-controller laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policy_required=False):
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=str, default="out")
        p.add_argument("--tasks", type=int, default=1)
        p.add_argument("--outer-steps", type=int, default=None, dest="outer_steps")
        p.add_argument("--policy", type=str, required=policy_required,
                       default=None, help="controller checkpoint (.npz)")
        p.add_argument("--schedule", type=str, default=None, help="schedule file")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    common(sub.add_parser("run", help="run episodes under static/policy/schedule control"))
    common(sub.add_parser("train", help="train a controller with outer-loop PPO"))
    common(sub.add_parser("eval", help="speedup fractions against the baseline grid"),
           policy_required=True)
    common(sub.add_parser("export-schedule", help="freeze one policy episode into a schedule"),
           policy_required=True)
    replay = sub.add_parser("replay", help="replay an exported schedule")
    common(replay)
    return parser


COMMANDS = {
    "run": cmd_run,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-schedule": cmd_export_schedule,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "replay" and not args.schedule:
        print(json.dumps({"error": "ValueError", "message": "replay needs --schedule"}),
              file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # surfaced as a machine-readable record
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
