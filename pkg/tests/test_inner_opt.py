import math

import numpy as np
import pytest

from hyperlab.inner_opt import (
    AdamwHypers,
    HyperParams,
    InnerState,
    TensorSlotState,
    adamw_step,
    baseline_grid,
    ciao_step,
    clip_gradient,
    schedule_value,
)


def scalar_adamw_reference(p0, grads, lr, beta1, beta2, eps, wd):
    """Independent element-by-element AdamW, pure python floats."""
    p = [float(x) for x in p0]
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    for t, g in enumerate(grads, start=1):
        for i in range(len(p)):
            m[i] = beta1 * m[i] + (1 - beta1) * float(g[i])
            v[i] = beta2 * v[i] + (1 - beta2) * float(g[i]) ** 2
            m_hat = m[i] / (1 - beta1**t)
            v_hat = v[i] / (1 - beta2**t)
            p[i] = p[i] - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * p[i])
    return p


class TestClipGradient:
    def test_first_call_fresh_max_is_clipped(self):
        h = HyperParams(grad_clip_fraction=0.8, one_minus_beta_gradclip=0.1)
        slot = TensorSlotState.zeros_like(np.zeros(4))
        g = np.array([10.0, 0.0, 0.0, 0.0])
        clipped, was_clipped = clip_gradient(g, slot, h)
        assert slot.gradclip_moving_max == 10.0
        assert was_clipped
        assert np.linalg.norm(clipped) == pytest.approx(8.0, abs=1e-12)

    def test_decayed_max_leaves_small_gradient_alone(self):
        h = HyperParams(grad_clip_fraction=0.8, one_minus_beta_gradclip=0.1)
        slot = TensorSlotState.zeros_like(np.zeros(4))
        clip_gradient(np.array([10.0, 0.0, 0.0, 0.0]), slot, h)
        g = np.array([1.0, 0.0, 0.0, 0.0])
        clipped, was_clipped = clip_gradient(g, slot, h)
        assert slot.gradclip_moving_max == pytest.approx(9.0)
        assert not was_clipped
        assert np.array_equal(clipped, g)

    def test_zero_gradient_passes_through(self):
        h = HyperParams()
        slot = TensorSlotState.zeros_like(np.zeros(3))
        clipped, was_clipped = clip_gradient(np.zeros(3), slot, h)
        assert not was_clipped
        assert np.array_equal(clipped, np.zeros(3))

    def test_nonfinite_gradient_zeroed_and_flagged(self):
        h = HyperParams()
        slot = TensorSlotState.zeros_like(np.zeros(3))
        g = np.array([np.nan, 1.0, 2.0])
        clipped, was_clipped = clip_gradient(g, slot, h)
        assert was_clipped
        assert np.array_equal(clipped, np.zeros(3))
        assert slot.nonfinite_count == 1

    def test_moving_max_nondecreasing_under_identical_gradients(self):
        h = HyperParams(one_minus_beta_gradclip=0.05)
        slot = TensorSlotState.zeros_like(np.zeros(2))
        g = np.array([3.0, 4.0])
        prev = 0.0
        for _ in range(50):
            clip_gradient(g, slot, h)
            assert slot.gradclip_moving_max >= prev
            prev = slot.gradclip_moving_max

    def test_post_clip_norm_never_exceeds_threshold(self):
        rng = np.random.default_rng(0)
        h = HyperParams(grad_clip_fraction=0.5, one_minus_beta_gradclip=0.2)
        slot = TensorSlotState.zeros_like(np.zeros(8))
        for _ in range(200):
            g = rng.normal(size=8) * rng.uniform(0.01, 100)
            clipped, _ = clip_gradient(g, slot, h)
            limit = h.grad_clip_fraction * slot.gradclip_moving_max
            assert np.linalg.norm(clipped) <= limit * (1 + 1e-12)


class TestCiaoStep:
    def test_adamax_accumulator_recurrence(self):
        h = HyperParams(
            one_minus_beta2=0.5,
            denominator_mode="adamax",
            use_lamb_trust=False,
            grad_clip_fraction=0.99,
            weight_decay=0.0,
        )
        params = [np.array([1.0])]
        state = InnerState.for_params(params)
        state.slots[0].gradclip_moving_max = 1e12  # never clip
        params, _ = ciao_step(params, [np.array([1.0])], h, state)
        assert state.slots[0].second_accumulator[0] == pytest.approx(1.0)
        ciao_step(params, [np.array([0.25])], h, state)
        assert state.slots[0].second_accumulator[0] == pytest.approx(0.5)

    def test_matches_adamw_on_small_tensor(self):
        rng = np.random.default_rng(42)
        p0 = rng.normal(size=3)
        grads = [rng.normal(size=3) for _ in range(20)]
        h = HyperParams(
            learning_rate=1e-3,
            one_minus_beta1=0.1,
            one_minus_beta2=0.001,
            epsilon=1e-8,
            weight_decay=0.01,
            denominator_mode="adam",
            use_lamb_trust=False,
            grad_clip_fraction=0.99,
        )
        params = [p0.copy()]
        state = InnerState.for_params(params)
        state.slots[0].gradclip_moving_max = 1e15
        for g in grads:
            params, _ = ciao_step(params, [g.copy()], h, state)
        ref = scalar_adamw_reference(
            p0, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, wd=0.01
        )
        np.testing.assert_allclose(params[0], ref, rtol=1e-12)

    def test_lars_limit_update_parallel_to_gradient(self):
        # Huge epsilon swamps the denominator, so the per-tensor update
        # direction collapses onto the (momentum of the) gradient.
        h = HyperParams(
            epsilon=1e12,
            use_lamb_trust=True,
            weight_decay=0.0,
            grad_clip_fraction=0.99,
        )
        rng = np.random.default_rng(7)
        p = [rng.normal(size=16)]
        g = rng.normal(size=16)
        state = InnerState.for_params(p)
        state.slots[0].gradclip_moving_max = 1e15
        new_p, _ = ciao_step(p, [g.copy()], h, state)
        update = p[0] - new_p[0]
        cos = np.dot(update, g) / (np.linalg.norm(update) * np.linalg.norm(g))
        angle = math.acos(min(1.0, cos))
        assert angle < 1e-6

    def test_gradient_scale_invariance_with_zero_epsilon(self):
        for mode in ("adam", "adamax"):
            for c in (1e-3, 1e3):
                h = HyperParams(epsilon=0.0, denominator_mode=mode)
                rng = np.random.default_rng(11)
                p_base = [rng.normal(size=6), rng.normal(size=3)]
                grads = [[rng.normal(size=6), rng.normal(size=3)] for _ in range(100)]

                pa = [x.copy() for x in p_base]
                sa = InnerState.for_params(pa)
                pb = [x.copy() for x in p_base]
                sb = InnerState.for_params(pb)
                for gs in grads:
                    pa, _ = ciao_step(pa, [g.copy() for g in gs], h, sa)
                    pb, _ = ciao_step(pb, [c * g for g in gs], h, sb)
                for a, b in zip(pa, pb):
                    np.testing.assert_allclose(a, b, rtol=1e-9)

    def test_trust_floor_and_zero_param_trust(self):
        h = HyperParams(use_lamb_trust=True, lamb_min_trust=1e-3, weight_decay=0.0)
        # Tiny parameter against a huge update norm EMA forces the floor.
        p = [np.array([1e-30])]
        state = InnerState.for_params(p)
        state.slots[0].lamb_update_norm_ema = 1e6
        new_p, stats = ciao_step(p, [np.array([1.0])], h, state)
        assert math.exp(stats.log_trust_ratios[0]) >= h.lamb_min_trust * (1 - 1e-9)
        # Zero parameter tensor still moves (trust 1).
        p = [np.zeros(2)]
        state = InnerState.for_params(p)
        new_p, stats = ciao_step(p, [np.ones(2)], h, state)
        assert np.any(new_p[0] != 0.0)
        assert stats.log_trust_ratios[0] == pytest.approx(0.0)

    def test_nonfinite_update_skips_tensor(self):
        h = HyperParams(learning_rate=1e308, use_lamb_trust=True, weight_decay=0.0)
        p = [np.array([1.0, 2.0])]
        state = InnerState.for_params(p)
        state.slots[0].lamb_update_norm_ema = 1e-300
        new_p, stats = ciao_step(p, [np.array([1.0, 1.0])], h, state)
        assert stats.nonfinite
        np.testing.assert_array_equal(new_p[0], p[0])

    def test_stats_fields_are_bounded(self):
        rng = np.random.default_rng(3)
        h = HyperParams()
        p = [rng.normal(size=10), rng.normal(size=4)]
        state = InnerState.for_params(p)
        for _ in range(10):
            grads = [rng.normal(size=10), rng.normal(size=4)]
            p, stats = ciao_step(p, grads, h, state)
            assert 0.0 <= stats.fraction_clipped <= 1.0
            assert 0.0 <= stats.fraction_denom_ge_eps <= 1.0
            for c in stats.cos_grad_momentum + stats.cos_grad_update + stats.cos_grad_param:
                assert -1.0 <= c <= 1.0


class TestAdamwStep:
    def test_zero_gradient_zero_decay_leaves_params(self):
        p = [np.array([1.0, -2.0])]
        state = InnerState.for_params(p)
        h = AdamwHypers(weight_decay=0.0)
        new_p = adamw_step(p, [np.zeros(2)], h, state)
        np.testing.assert_array_equal(new_p[0], p[0])

    def test_decay_only_shrinks_params(self):
        p = [np.array([1.0, -2.0])]
        state = InnerState.for_params(p)
        h = AdamwHypers(learning_rate=0.1, weight_decay=0.5)
        new_p = adamw_step(p, [np.zeros(2)], h, state)
        np.testing.assert_allclose(new_p[0], p[0] * (1 - 0.1 * 0.5))

    def test_against_scalar_reference(self):
        rng = np.random.default_rng(5)
        p0 = rng.normal(size=5)
        grads = [rng.normal(size=5) for _ in range(50)]
        h = AdamwHypers(learning_rate=3e-3, weight_decay=0.02)
        params = [p0.copy()]
        state = InnerState.for_params(params)
        for g in grads:
            params = adamw_step(params, [g.copy()], h, state)
        ref = scalar_adamw_reference(
            p0, grads, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8, wd=0.02
        )
        np.testing.assert_allclose(params[0], ref, rtol=1e-12)


class TestSchedules:
    def test_constant(self):
        assert schedule_value("constant", 1e-3, 0.7) == 1e-3

    def test_cosine_to_zero_endpoint(self):
        assert schedule_value("cosine_to_zero", 1e-3, 1.0) == pytest.approx(0.0, abs=1e-19)

    def test_cosine_to_tenth_endpoint(self):
        assert schedule_value("cosine_to_tenth", 1e-3, 1.0) == pytest.approx(1e-4)

    def test_linear_and_quadratic(self):
        assert schedule_value("linear", 2.0, 0.25) == pytest.approx(1.5)
        assert schedule_value("quadratic", 2.0, 0.5) == pytest.approx(0.5)

    def test_multistep_drops(self):
        assert schedule_value("multistep", 1.0, 0.0) == 1.0
        assert schedule_value("multistep", 1.0, 0.5) == pytest.approx(0.1)
        assert schedule_value("multistep", 1.0, 0.9) == pytest.approx(0.01)

    def test_exponential(self):
        assert schedule_value("exponential", 1.0, 1.0) == pytest.approx(0.01)

    def test_progress_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            schedule_value("constant", 1.0, 1.5)
        with pytest.raises(ValueError):
            schedule_value("constant", 1.0, -0.1)

    def test_grid_has_35_cells(self):
        grid = baseline_grid()
        assert len(grid) == 35
        assert len({b.label() for b in grid}) == 35
