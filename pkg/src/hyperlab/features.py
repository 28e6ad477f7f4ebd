"""Unitless feature extraction for the controller.

Everything the policy sees is a transformation designed to look the same on
toy problems and large ones: within-run percentiles (integral CDF features),
log-ratios, cosine similarities corrected for dimensionality, averages of
booleans, and a final EMA normalization clipped to [-2, 2].

Integral CDF features: instead of discretely sampling an observation stream
(whose statistics would depend on how often we sample), observations are
linearly interpolated over progress t in [0, 1] and weighted continuously
by ``b**t``, so a point near the end of training carries ``b`` times the
weight of one at the start.  The weighted mean and standard deviation give
a z-score for the current value, mapped through the Gaussian CDF to [0, 1].
One copy per decay base b in ``CDF_BASES``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .actions import SCALE, ActionSpace, NOISE_RANGES
from .inner_opt import HyperParams, StepStats, TINY

CDF_BASES = (1.25, 2.5, 5.0, 10.0, 20.0)
N_BASES = len(CDF_BASES)
# Base used for the "percentile of loss at checkpoint" feature.
CHECKPOINT_PERCENTILE_BASE_INDEX = CDF_BASES.index(5.0)

NOISE_SCALE_FLOOR = 1e-8
FEATURE_CLIP = 2.0
NORMALIZER_BETA = 0.999


def gaussian_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def clamped_logit(p: float) -> float:
    p = min(max(p, 1e-9), 1.0 - 1e-9)
    return math.log(p / (1.0 - p))


def _local_moments(x: float, dt: float, lam: float) -> tuple[float, float, float]:
    """J_k = integral of tau^k * e^(lam*tau) over [0, dt], k in {0, 1, 2}.

    A series expansion below |x| = |lam * dt| = 0.5 avoids the cancellation
    the closed forms suffer for small exponents; the closed forms are
    stable above it.
    """
    if abs(x) < 0.5:
        j0 = j1 = j2 = 0.0
        term = 1.0  # x^k / k!
        for k in range(24):
            j0 += term / (k + 1)
            j1 += term / (k + 2)
            j2 += term / (k + 3)
            term *= x / (k + 1)
            if term == 0.0:
                break
        return dt * j0, dt * dt * j1, dt**3 * j2
    ex = math.exp(x)
    j0 = math.expm1(x) / lam
    j1 = (ex * (x - 1.0) + 1.0) / lam**2
    j2 = (ex * (x * x - 2.0 * x + 2.0) - 2.0) / lam**3
    return j0, j1, j2


def _segment_moments(lams: np.ndarray, t0: float, dt: float):
    """Per-base weighted moments (scale, J0, J1, J2) of one segment.

    Computed once and shared by every stream observing the same segment.
    """
    n = len(lams)
    scale = np.empty(n)
    j0 = np.empty(n)
    j1 = np.empty(n)
    j2 = np.empty(n)
    for i in range(n):
        lam = lams[i]
        scale[i] = math.exp(lam * t0)
        j0[i], j1[i], j2[i] = _local_moments(lam * dt, dt, lam)
    return scale, j0, j1, j2


@dataclass
class IntegralCdfState:
    """Streaming weighted moments of a piecewise-linear observation curve.

    Per base: total weight mass, weighted sum of y, weighted sum of y^2.
    """

    bases: tuple[float, ...] = CDF_BASES
    weight_mass: np.ndarray = None
    weighted_sum: np.ndarray = None
    weighted_sq: np.ndarray = None
    y_prev: float = 0.0
    t_prev: float = 0.0
    count: int = 0
    skipped: int = 0

    def __post_init__(self):
        n = len(self.bases)
        self._lams = np.log(np.asarray(self.bases, dtype=float))
        if self.weight_mass is None:
            self.weight_mass = np.zeros(n)
        if self.weighted_sum is None:
            self.weighted_sum = np.zeros(n)
        if self.weighted_sq is None:
            self.weighted_sq = np.zeros(n)

    def copy(self) -> "IntegralCdfState":
        return IntegralCdfState(
            bases=self.bases,
            weight_mass=self.weight_mass.copy(),
            weighted_sum=self.weighted_sum.copy(),
            weighted_sq=self.weighted_sq.copy(),
            y_prev=self.y_prev,
            t_prev=self.t_prev,
            count=self.count,
            skipped=self.skipped,
        )

    def observe(self, y: float, t: float, _moments=None) -> bool:
        """Extend the stream with (t, y).  Returns False if y was skipped.

        ``_moments`` lets a caller that drives many streams over the same
        segment share the weighted-moment computation.
        """
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"progress must be in [0, 1], got {t}")
        if not math.isfinite(y):
            self.skipped += 1
            return False
        if self.count == 0:
            self.y_prev, self.t_prev, self.count = y, t, 1
            return True
        if t <= self.t_prev:
            raise ValueError(f"progress must increase strictly ({t} <= {self.t_prev})")
        t0, y0 = self.t_prev, self.y_prev
        dt = t - t0
        slope = (y - y0) / dt
        # Segment parameterized locally: y(tau) = y0 + slope * tau, tau in
        # [0, dt], weighted by e^(lam * t0) * e^(lam * tau), for every base.
        if _moments is None:
            _moments = _segment_moments(self._lams, t0, dt)
        scale, j0, j1, j2 = _moments
        self.weight_mass += scale * j0
        self.weighted_sum += scale * (y0 * j0 + slope * j1)
        self.weighted_sq += scale * (
            y0 * y0 * j0 + 2.0 * y0 * slope * j1 + slope * slope * j2
        )
        self.y_prev, self.t_prev = y, t
        self.count += 1
        return True

    def mean_std(self, base_index: int) -> tuple[float, float]:
        if self.count == 0:
            raise ValueError("no observations")
        if self.count == 1:
            return self.y_prev, 0.0
        w = self.weight_mass[base_index]
        mu = self.weighted_sum[base_index] / w
        var = self.weighted_sq[base_index] / w - mu * mu
        return mu, math.sqrt(max(var, 0.0))

    def value(self, y: float) -> np.ndarray:
        """Within-run percentile of y per base, in [0, 1].

        Empty stream or non-finite y gives the neutral 0.5.  A zero-spread
        stream compares directly: 1 above the mean, 0 below, 0.5 at it.
        """
        n = len(self.bases)
        out = np.full(n, 0.5)
        if self.count == 0 or not math.isfinite(y):
            return out
        if self.count == 1:
            if y > self.y_prev:
                return np.ones(n)
            if y < self.y_prev:
                return np.zeros(n)
            return out
        w = self.weight_mass
        mu = self.weighted_sum / w
        sigma = np.sqrt(np.maximum(self.weighted_sq / w - mu * mu, 0.0))
        for i in range(n):
            if sigma[i] <= 0.0:
                out[i] = 0.5 if y == mu[i] else (1.0 if y > mu[i] else 0.0)
            else:
                out[i] = gaussian_cdf((y - mu[i]) / sigma[i])
        return out


def integral_cdf_observe(state: IntegralCdfState, y: float, t: float) -> IntegralCdfState:
    state.observe(y, t)
    return state


def integral_cdf_value(state: IntegralCdfState, y: float) -> np.ndarray:
    return state.value(y)


@dataclass
class NormalizerState:
    """Scalar EMA mean/std normalizer with clipping to [-2, 2]."""

    ema_mean: float = 0.0
    ema_var: float = 0.0
    initialized: bool = False
    nonfinite_seen: bool = False


def normalize_clip(state: NormalizerState, x: float) -> float:
    """Update the EMA statistics with x and return its clipped z-score.

    The first observation returns 0; non-finite input returns 0 without
    touching the state.
    """
    if not math.isfinite(x):
        state.nonfinite_seen = True
        return 0.0
    if not state.initialized:
        state.ema_mean = x
        state.ema_var = 0.0
        state.initialized = True
        return 0.0
    b = NORMALIZER_BETA
    state.ema_mean = b * state.ema_mean + (1.0 - b) * x
    state.ema_var = b * state.ema_var + (1.0 - b) * (x - state.ema_mean) ** 2
    std = math.sqrt(state.ema_var)
    if std <= 0.0:
        return 0.0
    z = (x - state.ema_mean) / std
    return min(max(z, -FEATURE_CLIP), FEATURE_CLIP)


class VectorNormalizer:
    """Per-channel EMA normalization over a fixed-length feature vector.

    This layer persists across episodes (beta = 0.999 spans far more outer
    steps than a single run) and is stored with controller checkpoints.
    """

    def __init__(self, length: int):
        self.length = length
        self.mean = np.zeros(length)
        self.var = np.zeros(length)
        self.initialized = np.zeros(length, dtype=bool)

    def normalize(self, x: np.ndarray, update: bool = True) -> np.ndarray:
        if x.shape != (self.length,):
            raise ValueError(f"expected vector of length {self.length}, got {x.shape}")
        finite = np.isfinite(x)
        safe = np.where(finite, x, 0.0)
        if update:
            fresh = finite & ~self.initialized
            self.mean[fresh] = safe[fresh]
            self.var[fresh] = 0.0
            live = finite & self.initialized
            b = NORMALIZER_BETA
            self.mean[live] = b * self.mean[live] + (1 - b) * safe[live]
            self.var[live] = b * self.var[live] + (1 - b) * (safe[live] - self.mean[live]) ** 2
            self.initialized |= fresh
        std = np.sqrt(self.var)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(std > 0.0, (safe - self.mean) / np.where(std > 0, std, 1.0), 0.0)
        z = np.clip(z, -FEATURE_CLIP, FEATURE_CLIP)
        return np.where(finite, z, 0.0)

    def state_dict(self) -> dict:
        return {
            "mean": self.mean.copy(),
            "var": self.var.copy(),
            "initialized": self.initialized.copy(),
        }

    def load_state_dict(self, d: dict) -> None:
        self.mean = np.asarray(d["mean"], dtype=float).copy()
        self.var = np.asarray(d["var"], dtype=float).copy()
        self.initialized = np.asarray(d["initialized"], dtype=bool).copy()


def cdf_cosine_value(cos: float, dim: int) -> float:
    """Phi(cos * sqrt(d)): dimension-corrected similarity, uniform under independence."""
    return gaussian_cdf(cos * math.sqrt(dim))


def logit_cdf_cosine_value(cos: float, dim: int) -> float:
    return clamped_logit(cdf_cosine_value(cos, dim))


def cdf_cosine(u: np.ndarray, v: np.ndarray) -> tuple[float, bool]:
    """CDF cosine similarity of two vectors; flags zero-vector inputs."""
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu <= 0.0 or nv <= 0.0:
        return 0.5, True
    cos = float(np.dot(u, v) / (nu * nv))
    cos = min(1.0, max(-1.0, cos))
    return cdf_cosine_value(cos, u.size), False


def estimate_noise_scale(
    small_batch_sq_norm: float,
    full_batch_sq_norm: float,
    small_batch_size: float,
    full_batch_size: float,
    floor: float = NOISE_SCALE_FLOOR,
) -> float:
    """Two-batch-size estimate of tr(Sigma) / |G|^2.

    Uses the unbiased pair of estimators for the true-gradient norm and the
    per-example noise trace; degenerate or negative estimates are floored.
    """
    if small_batch_size == full_batch_size:
        raise ValueError("batch sizes must differ")
    if not (math.isfinite(small_batch_sq_norm) and math.isfinite(full_batch_sq_norm)):
        raise ValueError("gradient norms must be finite")
    g_sq = (full_batch_size * full_batch_sq_norm - small_batch_size * small_batch_sq_norm) / (
        full_batch_size - small_batch_size
    )
    trace = (small_batch_sq_norm - full_batch_sq_norm) / (
        1.0 / small_batch_size - 1.0 / full_batch_size
    )
    if g_sq <= 0.0 or not math.isfinite(trace):
        return floor
    return max(trace / g_sq, floor)


# Inner-step statistics, in a fixed order.  A further log-scale statistic
# would slot in here, but no usable estimator exists for it; omitted.
INNER_STAT_NAMES = (
    "fraction_clipped",
    "fraction_denom_ge_eps",
    "mean_abs_prelr_update",
    "log_update_param_ratio",
    "log_noise_scale",
    "log_trust_ratio",
    "cos_grad_momentum",
    "logit_cdf_cos_grad_momentum",
    "cos_grad_update",
    "logit_cdf_cos_grad_update",
    "cos_grad_param",
    "cdf_cos_grad_param",
)


def _mean_or_nan(values) -> float:
    vals = [v for v in values if math.isfinite(v)]
    return sum(vals) / len(vals) if vals else math.nan


def summarize_step_stats(stats: StepStats) -> dict[str, float]:
    """Collapse per-tensor step statistics into the fixed scalar set."""
    cos_m = _mean_or_nan(stats.cos_grad_momentum)
    cos_u = _mean_or_nan(stats.cos_grad_update)
    cos_p = _mean_or_nan(stats.cos_grad_param)
    sizes = stats.tensor_sizes
    logit_m = _mean_or_nan(
        [logit_cdf_cosine_value(c, d) for c, d in zip(stats.cos_grad_momentum, sizes)]
    )
    logit_u = _mean_or_nan(
        [logit_cdf_cosine_value(c, d) for c, d in zip(stats.cos_grad_update, sizes)]
    )
    cdf_p = _mean_or_nan(
        [cdf_cosine_value(c, d) for c, d in zip(stats.cos_grad_param, sizes)]
    )
    if stats.noise_scale is None:
        log_noise = math.nan
    else:
        log_noise = math.log(max(stats.noise_scale, NOISE_SCALE_FLOOR))
    return {
        "fraction_clipped": stats.fraction_clipped,
        "fraction_denom_ge_eps": stats.fraction_denom_ge_eps,
        "mean_abs_prelr_update": stats.mean_abs_prelr_update,
        "log_update_param_ratio": math.log(
            (stats.update_norm + TINY) / (stats.param_norm + TINY)
        ),
        "log_noise_scale": log_noise,
        "log_trust_ratio": _mean_or_nan(stats.log_trust_ratios),
        "cos_grad_momentum": cos_m,
        "logit_cdf_cos_grad_momentum": logit_m,
        "cos_grad_update": cos_u,
        "logit_cdf_cos_grad_update": logit_u,
        "cos_grad_param": cos_p,
        "cdf_cos_grad_param": cdf_p,
    }


class InnerStatsTracker:
    """Accumulates the intermittently-sampled inner-step statistics.

    Each statistic keeps a mean over the window since the last outer step
    plus an integral-CDF stream over the whole run.  CDF values are taken
    before the stream absorbs the new point, so the first sampled step of a
    run reads the neutral 0.5.
    """

    def __init__(self):
        self.streams = {name: IntegralCdfState() for name in INNER_STAT_NAMES}
        self.latest_cdf = {name: np.full(N_BASES, 0.5) for name in INNER_STAT_NAMES}
        self.window_sum = {name: 0.0 for name in INNER_STAT_NAMES}
        self.window_count = {name: 0 for name in INNER_STAT_NAMES}

    def observe(self, stats: StepStats, t: float) -> None:
        summary = summarize_step_stats(stats)
        # Streams that skipped a NaN sample lag at an older t_prev, so the
        # shared segment moments are cached per distinct segment start.
        moment_cache: dict[float, tuple] = {}
        for name, value in summary.items():
            if not math.isfinite(value):
                continue
            stream = self.streams[name]
            self.latest_cdf[name] = stream.value(value)
            moments = None
            if stream.count > 0 and t > stream.t_prev:
                t0 = stream.t_prev
                if t0 not in moment_cache:
                    moment_cache[t0] = _segment_moments(stream._lams, t0, t - t0)
                moments = moment_cache[t0]
            stream.observe(value, t, _moments=moments)
            self.window_sum[name] += value
            self.window_count[name] += 1

    def window_means(self) -> dict[str, float]:
        out = {}
        for name in INNER_STAT_NAMES:
            n = self.window_count[name]
            out[name] = self.window_sum[name] / n if n else math.nan
        return out

    def reset_window(self) -> None:
        for name in INNER_STAT_NAMES:
            self.window_sum[name] = 0.0
            self.window_count[name] = 0


def accumulate_inner_stats(tracker: InnerStatsTracker, stats: StepStats, t: float) -> None:
    tracker.observe(stats, t)


@dataclass
class FeatureLayout:
    """Fixed ordering of named channels; the contract a checkpoint pins."""

    entries: list[tuple[str, int]]

    @property
    def length(self) -> int:
        return sum(size for _, size in self.entries)

    def layout_hash(self) -> str:
        payload = json.dumps(self.entries).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def slices(self) -> dict[str, slice]:
        out, offset = {}, 0
        for name, size in self.entries:
            out[name] = slice(offset, offset + size)
            offset += size
        return out


def policy_layout(space: ActionSpace) -> FeatureLayout:
    entries: list[tuple[str, int]] = [("progress", 1)]
    for head in space.heads:
        entries.append((f"prev_action::{head.name}", head.arity))
    entries += [
        ("loss_ratio_is_nan", 1),
        ("loss_ratio_tanh", 1),
        ("loss_ratio_cdf", N_BASES),
        ("train_loss_is_nan", 1),
        ("train_loss_is_inf", 1),
        ("train_loss_cdf", N_BASES),
        ("valid_loss_is_nan", 1),
        ("valid_loss_is_inf", 1),
        ("valid_loss_cdf", N_BASES),
        ("checkpoint_percentile", 3),
        ("checkpoint_progress", 3),
    ]
    for head in space.hyper_heads:
        entries.append((f"hyper_ratio::{head.name}", 1))
    entries += [
        ("param_norm_ratio_tanh", 1),
        ("param_norm_ratio_cdf", N_BASES),
        ("update_param_ratio_tanh", 1),
        ("update_param_ratio_cdf", N_BASES),
    ]
    for name in INNER_STAT_NAMES:
        entries.append((f"stat_raw::{name}", 1))
        entries.append((f"stat_cdf::{name}", N_BASES))
    return FeatureLayout(entries=entries)


def value_extras_layout(space: ActionSpace, task_encoding_len: int) -> FeatureLayout:
    entries: list[tuple[str, int]] = [("task_encoding", task_encoding_len)]
    for head in space.hyper_heads:
        entries.append((f"hyper_noise::{head.name}", 1))
    entries += [
        ("reward_so_far", 1),
        ("log_train_loss_raw", 1),
        ("log_valid_loss_raw", 1),
        ("baseline_min", 1),
        ("baseline_max", 1),
        ("baseline_final", 1),
        ("baseline_fit_a", 1),
        ("baseline_fit_b", 1),
        ("baseline_fit_c", 1),
    ]
    return FeatureLayout(entries=entries)


@dataclass
class RunSnapshot:
    """Everything the feature pipeline needs at one outer step."""

    progress: float
    train_loss: float
    valid_loss: float
    hypers: HyperParams
    initial_hypers: HyperParams
    prev_action: dict[str, int] | None = None
    checkpoint_summaries: list[tuple[float, float]] = field(
        default_factory=lambda: [(0.0, 0.5)] * 3
    )
    param_norm: float = 0.0
    prev_param_norm: float = 0.0
    segment_update_norm: float = 0.0


@dataclass
class ValueExtras:
    """Non-robust context available to the value network during training."""

    task_encoding: np.ndarray
    hyper_noise: dict[str, float]
    reward_so_far: float = 0.0
    baseline_min: float = 0.0
    baseline_max: float = 0.0
    baseline_final: float = 0.0
    fit_a: float = 0.0
    fit_b: float = 0.0
    fit_c: float = 0.0


def _safe_log(x: float) -> float:
    if not math.isfinite(x):
        return math.nan
    if x < 0.0:
        return math.nan
    if x == 0.0:
        return -math.inf
    return math.log(x)


def _flag_value_cdf(stream: IntegralCdfState, x: float) -> tuple[float, float, float, np.ndarray]:
    """(is_nan, is_inf, default-substituted value, cdf features) for a stream input."""
    is_nan = 1.0 if math.isnan(x) else 0.0
    is_inf = 1.0 if math.isinf(x) else 0.0
    value = x if math.isfinite(x) else 0.0
    cdf = stream.value(x) if math.isfinite(x) else np.full(N_BASES, 0.5)
    return is_nan, is_inf, value, cdf


class FeaturePipeline:
    """Per-task feature state: CDF streams and the inner-stats tracker.

    The final normalization layer is shared across tasks (it belongs to the
    controller); pass it in, or a fresh one is created.
    """

    def __init__(
        self,
        space: ActionSpace,
        policy_normalizer: VectorNormalizer | None = None,
        value_normalizer: VectorNormalizer | None = None,
        task_encoding_len: int = 0,
    ):
        self.space = space
        self.layout = policy_layout(space)
        self.extras_layout = value_extras_layout(space, task_encoding_len)
        self.policy_normalizer = policy_normalizer or VectorNormalizer(self.layout.length)
        self.value_normalizer = value_normalizer or VectorNormalizer(self.extras_layout.length)
        if self.policy_normalizer.length != self.layout.length:
            raise ValueError("policy normalizer length does not match feature layout")
        self.loss_ratio_stream = IntegralCdfState()
        self.train_loss_stream = IntegralCdfState()
        self.valid_loss_stream = IntegralCdfState()
        self.param_ratio_stream = IntegralCdfState()
        self.update_ratio_stream = IntegralCdfState()
        self.stats = InnerStatsTracker()

    @property
    def policy_length(self) -> int:
        return self.layout.length

    @property
    def value_length(self) -> int:
        return self.layout.length + self.extras_layout.length

    def observe_step_stats(self, stats: StepStats, t: float) -> None:
        self.stats.observe(stats, t)

    def loss_percentile(self, valid_loss: float) -> float:
        """Within-run percentile of a loss, used to tag checkpoint saves."""
        return float(self.valid_loss_stream.value(valid_loss)[CHECKPOINT_PERCENTILE_BASE_INDEX])

    def raw_policy(self, snap: RunSnapshot) -> np.ndarray:
        parts: list[np.ndarray] = [np.array([snap.progress])]
        for head in self.space.heads:
            onehot = np.zeros(head.arity)
            if snap.prev_action is not None and head.name in snap.prev_action:
                onehot[snap.prev_action[head.name]] = 1.0
            parts.append(onehot)

        log_train = _safe_log(snap.train_loss)
        log_valid = _safe_log(snap.valid_loss)
        ratio = log_train - log_valid if math.isfinite(log_train) and math.isfinite(log_valid) else math.nan

        r_nan, _, r_val, r_cdf = _flag_value_cdf(self.loss_ratio_stream, ratio)
        parts.append(np.array([r_nan, math.tanh(r_val)]))
        parts.append(r_cdf)
        t_nan, t_inf, _, t_cdf = _flag_value_cdf(self.train_loss_stream, log_train)
        parts.append(np.array([t_nan, t_inf]))
        parts.append(t_cdf)
        v_nan, v_inf, _, v_cdf = _flag_value_cdf(self.valid_loss_stream, log_valid)
        parts.append(np.array([v_nan, v_inf]))
        parts.append(v_cdf)

        summaries = snap.checkpoint_summaries
        parts.append(np.array([s[1] for s in summaries]))
        parts.append(np.array([s[0] for s in summaries]))

        for head in self.space.hyper_heads:
            current = getattr(snap.hypers, head.name)
            initial = getattr(snap.initial_hypers, head.name)
            r = current / initial if initial != 0 and math.isfinite(current) else math.nan
            parts.append(np.array([r if math.isfinite(r) else 0.0]))

        pn_ratio = _safe_log((snap.param_norm + TINY) / (snap.prev_param_norm + TINY))
        _, _, pn_val, pn_cdf = _flag_value_cdf(self.param_ratio_stream, pn_ratio)
        parts.append(np.array([math.tanh(pn_val)]))
        parts.append(pn_cdf)
        up_ratio = _safe_log((snap.segment_update_norm + TINY) / (snap.prev_param_norm + TINY))
        _, _, up_val, up_cdf = _flag_value_cdf(self.update_ratio_stream, up_ratio)
        parts.append(np.array([math.tanh(up_val)]))
        parts.append(up_cdf)

        means = self.stats.window_means()
        for name in INNER_STAT_NAMES:
            mean = means[name]
            parts.append(np.array([mean if math.isfinite(mean) else 0.0]))
            parts.append(self.stats.latest_cdf[name])

        vec = np.concatenate(parts)
        assert vec.shape == (self.layout.length,)
        return vec

    def _commit_streams(self, snap: RunSnapshot) -> None:
        t = snap.progress
        log_train = _safe_log(snap.train_loss)
        log_valid = _safe_log(snap.valid_loss)
        if math.isfinite(log_train) and math.isfinite(log_valid):
            self.loss_ratio_stream.observe(log_train - log_valid, t)
        self.train_loss_stream.observe(log_train if math.isfinite(log_train) else math.nan, t)
        self.valid_loss_stream.observe(log_valid if math.isfinite(log_valid) else math.nan, t)
        pn_ratio = _safe_log((snap.param_norm + TINY) / (snap.prev_param_norm + TINY))
        if math.isfinite(pn_ratio):
            self.param_ratio_stream.observe(pn_ratio, t)
        up_ratio = _safe_log((snap.segment_update_norm + TINY) / (snap.prev_param_norm + TINY))
        if math.isfinite(up_ratio):
            self.update_ratio_stream.observe(up_ratio, t)
        self.stats.reset_window()

    def assemble_policy(
        self,
        snap: RunSnapshot,
        commit: bool = True,
        update_normalizer: bool | None = None,
    ) -> np.ndarray:
        """Policy observation: raw channels, EMA-normalized, clipped.

        ``commit`` advances the per-episode CDF streams with this step's
        observations; ``update_normalizer`` (default: same as ``commit``)
        advances the shared normalization layer, which evaluation episodes
        keep frozen.  Pass both as False for a fully pure read.
        """
        if update_normalizer is None:
            update_normalizer = commit
        raw = self.raw_policy(snap)
        out = self.policy_normalizer.normalize(raw, update=update_normalizer)
        if commit:
            self._commit_streams(snap)
        return out

    def assemble_value(
        self, snap: RunSnapshot, extras: ValueExtras, policy_vec: np.ndarray, commit: bool = True
    ) -> np.ndarray:
        """Value observation: the policy vector plus normalized task context."""
        parts: list[np.ndarray] = [np.asarray(extras.task_encoding, dtype=float)]
        for head in self.space.hyper_heads:
            draw = extras.hyper_noise.get(head.name)
            if draw is None:
                parts.append(np.zeros(1))
            else:
                kind = NOISE_RANGES[head.name][0]
                parts.append(np.array([math.log(draw) if kind == SCALE else draw]))
        log_train = _safe_log(snap.train_loss)
        log_valid = _safe_log(snap.valid_loss)
        parts.append(
            np.array(
                [
                    extras.reward_so_far,
                    log_train if math.isfinite(log_train) else 0.0,
                    log_valid if math.isfinite(log_valid) else 0.0,
                    extras.baseline_min,
                    extras.baseline_max,
                    extras.baseline_final,
                    extras.fit_a,
                    extras.fit_b,
                    extras.fit_c,
                ]
            )
        )
        raw = np.concatenate(parts)
        assert raw.shape == (self.extras_layout.length,)
        normalized = self.value_normalizer.normalize(raw, update=commit)
        return np.concatenate([policy_vec, normalized])


def assemble_policy_features(
    pipeline: FeaturePipeline, snapshot: RunSnapshot, commit: bool = True
) -> np.ndarray:
    return pipeline.assemble_policy(snapshot, commit=commit)


def assemble_value_features(
    pipeline: FeaturePipeline,
    snapshot: RunSnapshot,
    extras: ValueExtras,
    policy_vec: np.ndarray,
    commit: bool = True,
) -> np.ndarray:
    return pipeline.assemble_value(snapshot, extras, policy_vec, commit=commit)
