"""Relative actions, bounds, checkpoints, and the power-law reward.

Run:  python demos/03_reward_and_actions.py
"""

import numpy as np

from hyperlab.actions import (
    ActionSpace,
    CheckpointStore,
    LiveState,
    apply_action,
    apply_initial_noise,
    restart_action,
    sample_initial_noise,
)
from hyperlab.inner_opt import HyperParams, InnerState
from hyperlab.reward import LearningCurve, fit_power_law, reward_from_loss, shaped_rewards

print("=== Relative actions walk the hyperparameters ===")
space = ActionSpace.full()
rng = np.random.default_rng(1)
h = apply_initial_noise(HyperParams(), sample_initial_noise(rng))
print(f"noisy start: lr={h.learning_rate:.2e}  clip fraction={h.grad_clip_fraction:.3f}")
lr_head = space.head("learning_rate")
clip_head = space.head("grad_clip_fraction")
for _ in range(5):
    h = apply_action(h, lr_head, int(rng.integers(lr_head.arity)))
    h = apply_action(h, clip_head, int(rng.integers(clip_head.arity)))
    print(f"  lr={h.learning_rate:.2e}  clip fraction={h.grad_clip_fraction:.3f}")
print("(scales multiply, logit shifts stay safely inside (0, 1), bounds clamp)")

print()
print("=== Checkpoint save / load / swap ===")
params = [rng.normal(size=4)]
live = LiveState(params=params, inner_state=InnerState.for_params(params), hypers=h.copy())
store = CheckpointStore()
restart_action(store, live, 1, progress=0.25, loss_percentile=0.3)  # save slot 0
live.params[0][:] += 100.0  #训练 diverges, so to speak
print("after divergence, param[0] =", np.round(live.params[0][:2], 2))
restart_action(store, live, 2)  # load slot 0
print("after loading slot 0, param[0] =", np.round(live.params[0][:2], 2))

print()
print("=== Power-law reward ===")
# Fit the baseline's curve, then map any final loss to equivalent progress:
# 0 at the baseline's first loss, 1 at its final one, above 1 beyond it.
us = np.linspace(0.05, 1.0, 20)
curve = LearningCurve(us=us, losses=0.1 + 2.0 * us ** -0.5)
fit = fit_power_law(curve)
print(f"fit: {fit.a:.3f} * u^(-{fit.b:.3f}) + {fit.c:.3f}")
for loss in (float(fit.predict(0.05)), float(fit.predict(0.5)), float(fit.predict(1.0)), 1.9):
    print(f"  final loss {loss:6.3f} -> reward {reward_from_loss(fit, curve, loss):6.3f}")

print()
print("=== Shaping telescopes ===")
intermediate = [6.0, 4.0, 3.0, 2.6, 2.4, 2.2]
shaped = shaped_rewards(intermediate, fit, curve)
print("per-step shaped rewards:", np.round(shaped, 4))
print("sum:", round(float(shaped.sum()), 6),
      " == final reward:", round(reward_from_loss(fit, curve, 2.2), 6))
