"""Tour of the inner optimizer: denominators, trust ratio, moving-max clipping.

Run:  python demos/01_inner_optimizer.py
"""

import math

import numpy as np

from hyperlab.inner_opt import (
    AdamwHypers,
    HyperParams,
    InnerState,
    adamw_step,
    ciao_step,
    clip_gradient,
    schedule_value,
)
from hyperlab.tasks import NqmTask

print("=== Moving-max gradient clipping ===")
# The clip threshold is a fraction of an exponentially decayed running max
# of gradient norms, so it adapts to whatever scale the task produces.
h = HyperParams(grad_clip_fraction=0.8, one_minus_beta_gradclip=0.1)
slot = InnerState.for_params([np.zeros(4)]).slots[0]
for norm in (10.0, 1.0, 1.0, 25.0, 1.0):
    g = np.zeros(4)
    g[0] = norm
    clipped, was_clipped = clip_gradient(g, slot, h)
    print(
        f"|g|={norm:5.1f}  moving max={slot.gradclip_moving_max:6.2f}  "
        f"threshold={0.8 * slot.gradclip_moving_max:6.2f}  "
        f"clipped={'yes' if was_clipped else 'no ':3s}  |g'|={np.linalg.norm(clipped):5.2f}"
    )

print()
print("=== AdamW equivalence ===")
# With the trust ratio off, the squared-gradient denominator, and clipping
# disarmed, the inner optimizer IS AdamW.
rng = np.random.default_rng(0)
p0 = rng.normal(size=5)
h = HyperParams(
    learning_rate=1e-3, one_minus_beta1=0.1, one_minus_beta2=0.001,
    epsilon=1e-8, weight_decay=0.01, denominator_mode="adam",
    use_lamb_trust=False, grad_clip_fraction=0.99,
)
pa, pb = [p0.copy()], [p0.copy()]
sa, sb = InnerState.for_params(pa), InnerState.for_params(pb)
sa.slots[0].gradclip_moving_max = 1e12
ref = AdamwHypers(learning_rate=1e-3, weight_decay=0.01)
for _ in range(100):
    g = rng.normal(size=5)
    pa, _ = ciao_step(pa, [g.copy()], h, sa)
    pb = adamw_step(pb, [g.copy()], ref, sb)
print("max |difference| after 100 paired steps:", float(np.abs(pa[0] - pb[0]).max()))

print()
print("=== The large-epsilon limit ===")
# As epsilon swamps the denominator, the trust-ratio update direction
# collapses onto the gradient: layerwise normalized steepest descent.
for eps in (1e-6, 1e0, 1e6, 1e12):
    h = HyperParams(epsilon=eps, weight_decay=0.0)
    p = [rng.normal(size=32)]
    g = rng.normal(size=32)
    state = InnerState.for_params(p)
    state.slots[0].gradclip_moving_max = 1e15
    new_p, _ = ciao_step(p, [g.copy()], h, state)
    update = p[0] - new_p[0]
    cos = np.dot(update, g) / (np.linalg.norm(update) * np.linalg.norm(g))
    print(f"epsilon={eps:8.0e}  angle(update, gradient) = {math.acos(min(1, cos)):.2e} rad")

print()
print("=== Decay schedules on an NQM task ===")
task = NqmTask(dim=32, kappa=0.5, batch_size=8, seed=3)
for kind in ("constant", "cosine_to_zero", "multistep"):
    params = task.init_params()
    state = InnerState.for_params(params)
    hypers = AdamwHypers(learning_rate=1e-2, weight_decay=0.0)
    data_rng = np.random.default_rng(1)
    total = 400
    for step in range(total):
        hypers.learning_rate = schedule_value(kind, 1e-2, step / total)
        _, grads = task.step_batch(params, data_rng)
        params = adamw_step(params, grads, hypers, state)
    print(f"{kind:15s} final loss = {task.valid_loss(params):.5f}")
print("(decaying the step size beats a constant one on noisy quadratics)")
