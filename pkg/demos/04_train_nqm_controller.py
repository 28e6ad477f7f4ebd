"""Train a small controller on noisy quadratics, end to end.

The controller sees only unitless features, acts through relative
learning-rate and clip-fraction updates, and is rewarded against a
self-play baseline.  A few hundred iterations are enough for it to learn
the classic move on this family: decay the step size as training ends.

Run:  python demos/04_train_nqm_controller.py [iterations]
(defaults to a quick 40-iteration demonstration)
"""

import sys
import time

import numpy as np

from hyperlab.actions import apply_initial_noise, sample_initial_noise
from hyperlab.harness import (
    EpisodeConfig,
    OuterTrainingConfig,
    PolicyDriver,
    StaticDriver,
    run_episode,
    train_outer,
)
from hyperlab.inner_opt import HYPER_FLOAT_FIELDS, HyperParams
from hyperlab.policy import PpoConfig
from hyperlab.tasks import TaskDistributionConfig, sample_task

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 40

cfg = OuterTrainingConfig(
    iterations=iterations,
    tasks_per_iteration=4,
    episode=EpisodeConfig(outer_steps=16, inner_steps_per_outer=16, stat_every=4, seed=0),
    distribution=TaskDistributionConfig(family_weights={"nqm": 1.0}),
    ppo=PpoConfig(learning_rate=3e-4),
    head_names=["learning_rate", "grad_clip_fraction"],
    include_restart=False,
    hidden=64,
    seed=0,
    eval_every=max(iterations // 8, 1),
    eval_task_count=8,
)

print(f"training for {iterations} iterations "
      f"({cfg.tasks_per_iteration} tasks x {1 + cfg.rollouts_per_task} episodes each)...")
t0 = time.time()
controller, log = train_outer(cfg)
print(f"done in {time.time() - t0:.0f}s; "
      f"{log.policy_episodes} policy episodes, {log.baseline_episodes} baseline episodes")

print()
print("held-out reward vs a fixed no-action baseline over training:")
for r in log.eval_rounds:
    mean = float(np.mean(r["rewards"]))
    bar = "#" * max(int(8 * (mean + 1)), 0)
    print(f"  iter {r['iteration']:4d}  mean reward {mean:+.3f}  {bar}")

print()
print("head-to-head on 20 fresh tasks (equal budget):")
rng = np.random.default_rng(123)
wins = 0
for _ in range(20):
    task, _ = sample_task(rng, cfg.distribution)
    noise = sample_initial_noise(rng, ["learning_rate", "grad_clip_fraction"])
    hypers0 = apply_initial_noise(HyperParams(), noise)
    ecfg = EpisodeConfig(outer_steps=16, inner_steps_per_outer=16, stat_every=4,
                         seed=int(rng.integers(1 << 30)))
    static = run_episode(task, hypers0, StaticDriver(), ecfg, controller.space)
    policy = run_episode(
        task, hypers0,
        PolicyDriver(controller=controller, update_normalizers=False),
        ecfg, controller.space,
    )
    win = policy.final_valid_loss < static.final_valid_loss
    wins += win
print(f"controller beats static initial hyperparameters on {wins}/20 tasks")

print()
print("what a learned schedule looks like (one episode's learning-rate path):")
task, _ = sample_task(rng, cfg.distribution)
hypers0 = apply_initial_noise(
    HyperParams(), sample_initial_noise(rng, ["learning_rate", "grad_clip_fraction"])
)
result = run_episode(
    task, hypers0, PolicyDriver(controller=controller, update_normalizers=False),
    EpisodeConfig(outer_steps=16, inner_steps_per_outer=16, stat_every=4, seed=5),
    controller.space,
)
for progress, h in result.hyper_records:
    print(f"  progress {progress:.3f}  lr {h.learning_rate:.2e}  "
          f"clip fraction {h.grad_clip_fraction:.3f}")
