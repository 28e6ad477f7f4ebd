"""Freeze a controller run into a schedule file and replay it.

The exported file is plain text: full hyperparameter values per outer
step, keyed by progress, plus any checkpoint/restart events.  Replaying it
on the same task reproduces the original learning curve bit for bit; on a
different task it applies by progress fraction.

Run:  python demos/05_schedule_export_replay.py
"""

import numpy as np

from hyperlab.harness import (
    EpisodeConfig,
    OuterTrainingConfig,
    PolicyDriver,
    build_controller,
    export_schedule,
    replay_schedule,
    run_episode,
)
from hyperlab.inner_opt import HyperParams
from hyperlab.schedule_file import ScheduleFile
from hyperlab.tasks import NqmTask, TaskDistributionConfig

cfg = OuterTrainingConfig(
    distribution=TaskDistributionConfig(family_weights={"nqm": 1.0}),
    head_names=["learning_rate", "grad_clip_fraction"],
    include_restart=True,
    hidden=16,
    seed=4,
)
controller, space, enc_len = build_controller(cfg)
task = NqmTask(dim=24, kappa=0.4, batch_size=8, seed=99)
episode_cfg = EpisodeConfig(outer_steps=8, inner_steps_per_outer=8, stat_every=4, seed=21)

result = run_episode(
    task, HyperParams(), PolicyDriver(controller=controller), episode_cfg, space, enc_len
)
schedule = export_schedule(result, task)
text = schedule.serialize()
print("=== exported schedule (first lines) ===")
print("\n".join(text.splitlines()[:12]))

parsed = ScheduleFile.parse(text)
replay = replay_schedule(parsed, task, episode_cfg, space)
print()
print("=== replay on the source task ===")
print("curves bit-identical:",
      bool(np.array_equal(result.curve.losses, replay.curve.losses)))
print(f"final loss, original {result.final_valid_loss!r}")
print(f"final loss, replay   {replay.final_valid_loss!r}")

other = NqmTask(dim=40, kappa=0.2, batch_size=8, seed=555)
foreign = replay_schedule(parsed, other, episode_cfg, space)
print()
print("=== replay on a different task (by progress fraction) ===")
print(f"final loss on the new task: {foreign.final_valid_loss:.5f}")
print("(restart events are skipped off the source task)")
