import copy
import math

import numpy as np
import pytest
from scipy import integrate
from scipy import stats as sps

from hyperlab.actions import ActionSpace
from hyperlab.features import (
    CDF_BASES,
    FeaturePipeline,
    InnerStatsTracker,
    IntegralCdfState,
    NormalizerState,
    RunSnapshot,
    ValueExtras,
    VectorNormalizer,
    cdf_cosine,
    cdf_cosine_value,
    estimate_noise_scale,
    gaussian_cdf,
    normalize_clip,
    policy_layout,
    summarize_step_stats,
)
from hyperlab.inner_opt import HyperParams, StepStats


def quadrature_mean_std(points, base):
    """Independent oracle: numeric quadrature of the weighted interpolant."""
    lam = math.log(base)
    w = lambda t: math.exp(lam * t)
    tol = dict(epsabs=1e-13, epsrel=1e-13, limit=200)
    mass = num = sq = 0.0
    for (t0, y0), (t1, y1) in zip(points[:-1], points[1:]):
        interp = lambda t: y0 + (y1 - y0) * (t - t0) / (t1 - t0)
        mass += integrate.quad(w, t0, t1, **tol)[0]
        num += integrate.quad(lambda t: w(t) * interp(t), t0, t1, **tol)[0]
        sq += integrate.quad(lambda t: w(t) * interp(t) ** 2, t0, t1, **tol)[0]
    mu = num / mass
    var = sq / mass - mu * mu
    return mu, math.sqrt(max(var, 0.0))


class TestIntegralCdf:
    def test_single_point_convention(self):
        s = IntegralCdfState()
        s.observe(3.0, 0.0)
        for i in range(len(CDF_BASES)):
            mu, sigma = s.mean_std(i)
            assert mu == 3.0 and sigma == 0.0

    def test_uniform_weight_linear_ramp(self):
        # y(t) = t on [0, 1] under flat weight: mean 1/2, var 1/12.
        s = IntegralCdfState(bases=(1.0,))
        s.observe(0.0, 0.0)
        s.observe(1.0, 1.0)
        mu, sigma = s.mean_std(0)
        assert mu == pytest.approx(0.5, abs=1e-12)
        assert sigma == pytest.approx(math.sqrt(1.0 / 12.0), abs=1e-12)

    def test_accumulators_match_quadrature(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = int(rng.integers(2, 40))
            ts = np.sort(rng.uniform(0, 1, size=n))
            ts = np.unique(ts)
            ys = rng.normal(size=len(ts)) * rng.uniform(0.1, 5)
            s = IntegralCdfState()
            for t, y in zip(ts, ys):
                s.observe(float(y), float(t))
            if s.count < 2:
                continue
            points = list(zip(ts.tolist(), ys.tolist()))
            for i, b in enumerate(CDF_BASES):
                mu_ref, sigma_ref = quadrature_mean_std(points, b)
                mu, sigma = s.mean_std(i)
                assert mu == pytest.approx(mu_ref, abs=1e-9)
                assert sigma == pytest.approx(sigma_ref, abs=1e-9)

    def test_first_value_is_half(self):
        s = IntegralCdfState()
        assert np.all(s.value(12.3) == 0.5)

    def test_second_value_is_zero_or_one(self):
        s = IntegralCdfState()
        s.observe(5.0, 0.0)
        assert np.all(s.value(6.0) == 1.0)
        assert np.all(s.value(4.0) == 0.0)
        assert np.all(s.value(5.0) == 0.5)

    def test_value_at_mean_is_half(self):
        s = IntegralCdfState(bases=(1.0,))
        s.observe(0.0, 0.0)
        s.observe(1.0, 1.0)
        mu, sigma = s.mean_std(0)
        assert sigma > 0
        assert s.value(mu)[0] == pytest.approx(0.5, abs=1e-12)

    def test_nonincreasing_progress_rejected(self):
        s = IntegralCdfState()
        s.observe(1.0, 0.5)
        with pytest.raises(ValueError):
            s.observe(2.0, 0.5)
        with pytest.raises(ValueError):
            s.observe(2.0, 0.4)

    def test_nonfinite_observation_skipped(self):
        s = IntegralCdfState()
        s.observe(1.0, 0.0)
        assert not s.observe(math.nan, 0.5)
        assert s.skipped == 1 and s.count == 1
        assert s.observe(2.0, 0.5)  # progress 0.5 still available

    def test_affine_invariance(self):
        rng = np.random.default_rng(1)
        ts = np.sort(rng.uniform(0, 1, size=12))
        ys = rng.normal(size=12)
        alpha, delta = 3.7, -11.0
        a, b = IntegralCdfState(), IntegralCdfState()
        for t, y in zip(ts, ys):
            a.observe(float(y), float(t))
            b.observe(float(alpha * y + delta), float(t))
        probe = float(rng.normal())
        np.testing.assert_allclose(
            a.value(probe), b.value(alpha * probe + delta), atol=1e-9
        )


class TestNormalizeClip:
    def test_constant_stream_goes_to_zero(self):
        s = NormalizerState()
        outs = [normalize_clip(s, 4.2) for _ in range(100)]
        assert outs[0] == 0.0
        assert abs(outs[-1]) < 1e-9

    def test_always_within_clip(self):
        rng = np.random.default_rng(2)
        s = NormalizerState()
        for _ in range(2000):
            out = normalize_clip(s, float(rng.normal() * 10.0 ** rng.integers(-3, 4)))
            assert -2.0 <= out <= 2.0

    def test_step_change_saturates(self):
        s = NormalizerState()
        for _ in range(500):
            normalize_clip(s, 0.0)
        assert normalize_clip(s, 1000.0) == 2.0

    def test_nonfinite_returns_zero_with_flag(self):
        s = NormalizerState()
        normalize_clip(s, 1.0)
        assert normalize_clip(s, math.inf) == 0.0
        assert s.nonfinite_seen


class TestVectorNormalizer:
    def test_matches_scalar_path(self):
        rng = np.random.default_rng(3)
        vec = VectorNormalizer(3)
        scalars = [NormalizerState() for _ in range(3)]
        for _ in range(50):
            x = rng.normal(size=3)
            out_v = vec.normalize(x.copy())
            out_s = [normalize_clip(s, float(xi)) for s, xi in zip(scalars, x)]
            np.testing.assert_allclose(out_v, out_s, atol=1e-12)

    def test_update_false_is_pure(self):
        vec = VectorNormalizer(2)
        vec.normalize(np.array([1.0, 2.0]))
        before = vec.state_dict()
        vec.normalize(np.array([5.0, -3.0]), update=False)
        after = vec.state_dict()
        np.testing.assert_array_equal(before["mean"], after["mean"])
        np.testing.assert_array_equal(before["var"], after["var"])


class TestCdfCosine:
    def test_orthogonal_is_half(self):
        u = np.array([1.0, 0.0, 0.0])
        v = np.array([0.0, 1.0, 0.0])
        value, flagged = cdf_cosine(u, v)
        assert value == pytest.approx(0.5)
        assert not flagged

    def test_identical_unit_dim_one(self):
        assert cdf_cosine_value(1.0, 1) == pytest.approx(0.8413, abs=1e-4)

    def test_zero_vector_flagged(self):
        value, flagged = cdf_cosine(np.zeros(3), np.ones(3))
        assert value == 0.5 and flagged

    def test_uniform_under_independence(self):
        rng = np.random.default_rng(4)
        vals = []
        for _ in range(400):
            u = rng.normal(size=1000)
            v = rng.normal(size=1000)
            vals.append(cdf_cosine(u, v)[0])
        _, p = sps.kstest(vals, "uniform")
        assert p > 0.01


class TestNoiseScale:
    def test_equal_batch_sizes_rejected(self):
        with pytest.raises(ValueError):
            estimate_noise_scale(1.0, 1.0, 4, 4)

    def test_noise_free_is_floored(self):
        est = estimate_noise_scale(2.5, 2.5, 1, 64)
        assert est == pytest.approx(1e-8)

    def test_monte_carlo_recovery_and_linearity(self):
        rng = np.random.default_rng(5)
        d, g_norm, sigma = 50, 2.0, 0.3
        mu = rng.normal(size=d)
        mu *= g_norm / np.linalg.norm(mu)
        true_scale = d * sigma**2 / g_norm**2

        def run(noise_std, trials=1000, b_small=1, b_big=64):
            ests = []
            for _ in range(trials):
                gs = mu + rng.normal(size=d) * noise_std / math.sqrt(b_small)
                gb = mu + rng.normal(size=d) * noise_std / math.sqrt(b_big)
                ests.append(
                    estimate_noise_scale(
                        float(np.sum(gs**2)), float(np.sum(gb**2)), b_small, b_big
                    )
                )
            return float(np.mean(ests))

        est = run(sigma)
        assert abs(est - true_scale) / true_scale < 0.2
        est2 = run(sigma * math.sqrt(2))
        assert est2 / est == pytest.approx(2.0, rel=0.25)


def make_stats(frac_clipped=0.0, frac_denom=1.0, mean_u=0.1, noise=None):
    return StepStats(
        fraction_clipped=frac_clipped,
        fraction_denom_ge_eps=frac_denom,
        mean_abs_prelr_update=mean_u,
        log_trust_ratios=[0.0],
        cos_grad_momentum=[0.5],
        cos_grad_update=[0.3],
        cos_grad_param=[-0.1],
        tensor_sizes=[10],
        update_norm=1.0,
        param_norm=10.0,
        noise_scale=noise,
    )


class TestInnerStatsTracker:
    def test_no_clipping_gives_zero_fraction(self):
        tr = InnerStatsTracker()
        for i in range(5):
            tr.observe(make_stats(frac_clipped=0.0), t=(i + 1) / 10)
        assert tr.window_means()["fraction_clipped"] == 0.0

    def test_all_denom_above_eps_gives_one(self):
        tr = InnerStatsTracker()
        tr.observe(make_stats(frac_denom=1.0), t=0.1)
        assert tr.window_means()["fraction_denom_ge_eps"] == 1.0

    def test_window_mean_is_arithmetic_mean(self):
        tr = InnerStatsTracker()
        vals = [0.1, 0.5, 0.9, 0.3]
        for i, v in enumerate(vals):
            tr.observe(make_stats(frac_clipped=v), t=(i + 1) / 10)
        assert tr.window_means()["fraction_clipped"] == pytest.approx(np.mean(vals))
        tr.reset_window()
        assert math.isnan(tr.window_means()["fraction_clipped"])

    def test_summary_names_complete(self):
        summary = summarize_step_stats(make_stats(noise=0.5))
        assert summary["log_noise_scale"] == pytest.approx(math.log(0.5))
        assert summary["cos_grad_momentum"] == 0.5


def fresh_snapshot(space, progress=0.0):
    return RunSnapshot(
        progress=progress,
        train_loss=1.0,
        valid_loss=1.2,
        hypers=HyperParams(),
        initial_hypers=HyperParams(),
        prev_action=None,
        param_norm=5.0,
        prev_param_norm=5.0,
        segment_update_norm=0.0,
    )


class TestPipeline:
    def test_layout_length_full_space(self):
        space = ActionSpace.full()
        layout = policy_layout(space)
        # 1 progress + 35 action slots + 3x7 loss channels + 6 checkpoint
        # + 8 ratios + 2x6 norm ratios + 12x6 stats
        assert layout.length == 1 + 35 + 21 + 6 + 8 + 12 + 72

    def test_fresh_run_raw_channels(self):
        space = ActionSpace.full()
        pipe = FeaturePipeline(space)
        raw = pipe.raw_policy(fresh_snapshot(space))
        sl = pipe.layout.slices()
        assert raw[sl["progress"]][0] == 0.0
        for head in space.heads:
            assert np.all(raw[sl[f"prev_action::{head.name}"]] == 0.0)
        for name in ("loss_ratio_cdf", "train_loss_cdf", "valid_loss_cdf",
                     "param_norm_ratio_cdf", "update_param_ratio_cdf"):
            assert np.all(raw[sl[name]] == 0.5)
        for stat in ("fraction_clipped", "cos_grad_param"):
            assert np.all(raw[sl[f"stat_cdf::{stat}"]] == 0.5)
        assert np.all(raw[sl["checkpoint_percentile"]] == 0.5)
        assert np.all(raw[sl["checkpoint_progress"]] == 0.0)

    def test_purity_without_commit(self):
        space = ActionSpace.full()
        pipe = FeaturePipeline(space)
        snap = fresh_snapshot(space)
        a = pipe.assemble_policy(snap, commit=False)
        b = pipe.assemble_policy(snap, commit=False)
        np.testing.assert_array_equal(a, b)

    def test_loss_scale_invariance_of_cdf_channels(self):
        space = ActionSpace.full()
        pa, pb = FeaturePipeline(space), FeaturePipeline(space)
        rng = np.random.default_rng(6)
        sl = pa.layout.slices()
        scale = 17.0
        for k in range(6):
            loss = float(rng.uniform(0.5, 2.0))
            vloss = float(rng.uniform(0.5, 2.0))
            sa = fresh_snapshot(space, progress=k / 6)
            sa.train_loss, sa.valid_loss = loss, vloss
            sb = fresh_snapshot(space, progress=k / 6)
            sb.train_loss, sb.valid_loss = loss * scale, vloss * scale
            ra = pa.raw_policy(sa)
            rb = pb.raw_policy(sb)
            for name in ("loss_ratio_cdf", "train_loss_cdf", "valid_loss_cdf",
                         "loss_ratio_tanh"):
                np.testing.assert_allclose(ra[sl[name]], rb[sl[name]], atol=1e-9)
            pa.assemble_policy(sa)
            pb.assemble_policy(sb)

    def test_nan_losses_flagged_and_defaulted(self):
        space = ActionSpace.full()
        pipe = FeaturePipeline(space)
        snap = fresh_snapshot(space)
        snap.train_loss = math.nan
        snap.valid_loss = -1.0  # negative loss: log undefined -> nan path
        raw = pipe.raw_policy(snap)
        sl = pipe.layout.slices()
        assert raw[sl["train_loss_is_nan"]][0] == 1.0
        assert raw[sl["valid_loss_is_nan"]][0] == 1.0
        assert raw[sl["loss_ratio_is_nan"]][0] == 1.0
        assert np.all(np.isfinite(raw))

    def test_assembled_features_bounded_under_fuzz(self):
        space = ActionSpace.full()
        pipe = FeaturePipeline(space, task_encoding_len=4)
        rng = np.random.default_rng(7)
        specials = [math.nan, math.inf, -math.inf, 0.0]
        for k in range(300):
            snap = fresh_snapshot(space, progress=min(k / 300, 1.0))
            snap.train_loss = (
                float(rng.choice(specials)) if rng.random() < 0.3 else float(rng.normal())
            )
            snap.valid_loss = (
                float(rng.choice(specials)) if rng.random() < 0.3 else float(rng.lognormal())
            )
            snap.param_norm = abs(float(rng.normal())) * 10.0 ** rng.integers(-6, 6)
            snap.prev_param_norm = abs(float(rng.normal()))
            snap.segment_update_norm = abs(float(rng.normal()))
            snap.prev_action = {h.name: int(rng.integers(h.arity)) for h in space.heads}
            vec = pipe.assemble_policy(snap, commit=False)
            assert np.all(np.isfinite(vec))
            assert np.all(np.abs(vec) <= 2.0)

    def test_value_vector_extends_policy_vector(self):
        space = ActionSpace.full()
        pipe = FeaturePipeline(space, task_encoding_len=3)
        snap = fresh_snapshot(space)
        pol = pipe.assemble_policy(snap, commit=False)
        extras = ValueExtras(
            task_encoding=np.array([1.0, 0.0, 0.0]),
            hyper_noise={"learning_rate": 2.0},
            reward_so_far=0.7,
            baseline_min=0.1,
            baseline_max=2.0,
            baseline_final=0.2,
            fit_a=1.0,
            fit_b=0.5,
            fit_c=0.05,
        )
        val = pipe.assemble_value(snap, extras, pol, commit=False)
        assert val.shape == (pipe.value_length,)
        np.testing.assert_array_equal(val[: pipe.policy_length], pol)
        assert np.all(np.isfinite(val))

    def test_hyper_ratio_channels_only_expose_ratios(self):
        # Scaling current and initial hypers together leaves the policy
        # features unchanged: absolute values are invisible.
        space = ActionSpace.reduced(["learning_rate", "grad_clip_fraction"])
        pa, pb = FeaturePipeline(space), FeaturePipeline(space)
        snap_a = fresh_snapshot(space)
        snap_b = fresh_snapshot(space)
        snap_b.hypers = HyperParams(learning_rate=3e-2)
        snap_b.initial_hypers = HyperParams(learning_rate=3e-2)
        snap_a.hypers = HyperParams(learning_rate=1e-3)
        snap_a.initial_hypers = HyperParams(learning_rate=1e-3)
        np.testing.assert_array_equal(pa.raw_policy(snap_a), pb.raw_policy(snap_b))

    def test_layout_hash_changes_with_space(self):
        full = policy_layout(ActionSpace.full())
        small = policy_layout(ActionSpace.reduced(["learning_rate"]))
        assert full.layout_hash() != small.layout_hash()

    def test_layout_audit_no_absolute_hyper_channels(self):
        # The only hyperparameter-derived policy channels are the
        # current/initial ratios: nothing else names a hyperparameter.
        layout = policy_layout(ActionSpace.full())
        for name, _ in layout.entries:
            if "hyper" in name:
                assert name.startswith("hyper_ratio::")
