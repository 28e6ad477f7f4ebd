"""Property-based checks of the module invariants."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperlab.actions import ActionSpace, HYPER_BOUNDS, apply_action, clamp_hypers
from hyperlab.features import IntegralCdfState, NormalizerState, normalize_clip
from hyperlab.inner_opt import HyperParams, TensorSlotState, clip_gradient, schedule_value
from hyperlab.reward import LearningCurve, fit_power_law, reward_from_loss, shaped_rewards

finite_floats = st.floats(
    allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12
)


@given(st.lists(finite_floats, min_size=1, max_size=60))
@settings(max_examples=200, deadline=None)
def test_normalize_clip_always_bounded(xs):
    state = NormalizerState()
    for x in xs:
        out = normalize_clip(state, x)
        assert -2.0 <= out <= 2.0


@given(
    st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=30),
    st.floats(min_value=1e-3, max_value=100.0),
    st.floats(min_value=-10.0, max_value=10.0),
)
@settings(max_examples=100, deadline=None)
def test_integral_cdf_affine_invariance(ys, alpha, delta):
    ts = np.linspace(0.0, 1.0, len(ys) + 1)
    a, b = IntegralCdfState(), IntegralCdfState()
    for t, y in zip(ts, ys):
        a.observe(float(y), float(t))
        b.observe(float(alpha * y + delta), float(t))
    probe = ys[-1] * 0.5 + 1.0
    np.testing.assert_allclose(
        a.value(probe), b.value(alpha * probe + delta), atol=1e-9
    )


@given(
    st.lists(st.floats(min_value=1e-6, max_value=1e4), min_size=1, max_size=40),
    st.floats(min_value=0.01, max_value=0.99),
    st.floats(min_value=1e-4, max_value=0.5),
)
@settings(max_examples=100, deadline=None)
def test_clip_norm_never_exceeds_threshold(norms, fraction, rate):
    h = HyperParams(grad_clip_fraction=fraction, one_minus_beta_gradclip=rate)
    slot = TensorSlotState.zeros_like(np.zeros(3))
    for norm in norms:
        g = np.array([norm, 0.0, 0.0])
        clipped, _ = clip_gradient(g, slot, h)
        limit = fraction * slot.gradclip_moving_max
        assert np.linalg.norm(clipped) <= limit * (1 + 1e-9) or slot.gradclip_moving_max == 0


@given(st.data())
@settings(max_examples=150, deadline=None)
def test_actions_never_leave_bounds(data):
    space = ActionSpace.full()
    h = clamp_hypers(HyperParams())
    heads = space.hyper_heads
    for _ in range(data.draw(st.integers(min_value=1, max_value=40))):
        head = data.draw(st.sampled_from(heads))
        choice = data.draw(st.integers(min_value=0, max_value=head.arity - 1))
        h = apply_action(h, head, choice)
    for name, (lo, hi) in HYPER_BOUNDS.items():
        assert lo <= getattr(h, name) <= hi


@given(
    st.sampled_from(
        ["constant", "multistep", "linear", "quadratic", "exponential",
         "cosine_to_zero", "cosine_to_tenth"]
    ),
    st.floats(min_value=1e-7, max_value=10.0),
    st.floats(min_value=0.0, max_value=1.0),
)
@settings(max_examples=200, deadline=None)
def test_schedules_bounded_by_base_rate(kind, base_lr, progress):
    lr = schedule_value(kind, base_lr, progress)
    assert 0.0 <= lr <= base_lr * (1 + 1e-12)


@given(st.lists(st.floats(min_value=0.11, max_value=30.0), min_size=2, max_size=20))
@settings(max_examples=100, deadline=None)
def test_shaping_telescopes_for_any_loss_sequence(losses):
    us = np.linspace(0.1, 1.0, 12)
    curve = LearningCurve(us=us, losses=0.1 + 2.0 * us ** (-0.7))
    fit = fit_power_law(curve)
    best = list(np.minimum.accumulate(losses))
    shaped = shaped_rewards(best, fit, curve)
    total = reward_from_loss(fit, curve, best[-1])
    assert abs(shaped.sum() - total) < 1e-12
