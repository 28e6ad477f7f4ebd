"""Configurable inner adaptive optimizer, AdamW reference, and schedule grid.

The inner optimizer is an Adam-family update with a selectable denominator
(EMA of squared gradients, or an exponentially decayed running max of |g|),
an optional layerwise trust ratio normalized by an EMA of the update norm,
decoupled weight decay, and gradient clipping against a moving maximum of
gradient norms.  Moving-average rates are stored as ``1 - beta`` throughout
so that multiplicative control actions compose cleanly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

# Guard for denominators that may be exactly zero (trust ratio, norm ratios).
TINY = 1e-12


@dataclass
class HyperParams:
    """The controllable hyperparameters of the inner optimizer.

    Defaults are the initial values before any noise or control action is
    applied.  ``denominator_mode`` selects between the squared-gradient EMA
    ("adam") and the decayed running max of |g| ("adamax").
    """

    learning_rate: float = 1e-3
    one_minus_beta1: float = 0.1
    one_minus_beta2: float = 1e-2
    epsilon: float = 1e-6
    weight_decay: float = 1e-2
    grad_clip_fraction: float = 0.8
    one_minus_beta_gradclip: float = 1e-2
    denominator_mode: str = "adamax"
    use_lamb_trust: bool = True
    lamb_min_trust: float = 1e-3
    one_minus_beta_lamb: float = 0.05

    def copy(self) -> "HyperParams":
        return HyperParams(**self.to_dict())

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)


# Float-valued fields in a fixed order; this is also the column order used
# by exported schedule files.
HYPER_FLOAT_FIELDS = (
    "learning_rate",
    "one_minus_beta1",
    "one_minus_beta2",
    "epsilon",
    "weight_decay",
    "grad_clip_fraction",
    "one_minus_beta_gradclip",
    "lamb_min_trust",
    "one_minus_beta_lamb",
)


@dataclass
class TensorSlotState:
    """Per-tensor optimizer accumulators plus streaming clip/trust statistics."""

    first_moment: np.ndarray
    second_accumulator: np.ndarray
    gradclip_moving_max: float = 0.0
    lamb_update_norm_ema: float = 0.0
    step_count: int = 0
    nonfinite_count: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "TensorSlotState":
        return cls(
            first_moment=np.zeros_like(param),
            second_accumulator=np.zeros_like(param),
        )

    def copy(self) -> "TensorSlotState":
        return TensorSlotState(
            first_moment=self.first_moment.copy(),
            second_accumulator=self.second_accumulator.copy(),
            gradclip_moving_max=self.gradclip_moving_max,
            lamb_update_norm_ema=self.lamb_update_norm_ema,
            step_count=self.step_count,
            nonfinite_count=self.nonfinite_count,
        )


@dataclass
class InnerState:
    """Optimizer state for a list of parameter tensors.  Single-owner."""

    slots: list[TensorSlotState] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "InnerState":
        return cls(slots=[TensorSlotState.zeros_like(p) for p in params])

    def copy(self) -> "InnerState":
        return InnerState(slots=[s.copy() for s in self.slots])


@dataclass
class StepStats:
    """Unitless summaries of one optimizer step, consumed by the feature pipeline."""

    fraction_clipped: float = 0.0
    fraction_denom_ge_eps: float = 0.0
    mean_abs_prelr_update: float = 0.0
    log_trust_ratios: list[float] = field(default_factory=list)
    cos_grad_momentum: list[float] = field(default_factory=list)
    cos_grad_update: list[float] = field(default_factory=list)
    cos_grad_param: list[float] = field(default_factory=list)
    tensor_sizes: list[int] = field(default_factory=list)
    update_norm: float = 0.0
    param_norm: float = 0.0
    noise_scale: float | None = None
    nonfinite: bool = False


def _norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.sum(x * x)))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = _norm(a), _norm(b)
    if na <= 0.0 or nb <= 0.0:
        return 0.0
    c = float(np.sum(a * b) / (na * nb))
    return min(1.0, max(-1.0, c))


def clip_gradient(
    grad: np.ndarray, slot: TensorSlotState, h: HyperParams
) -> tuple[np.ndarray, bool]:
    """Clip ``grad`` against a fraction of the moving maximum of gradient norms.

    The moving max is updated first, with the current norm included, so a
    fresh record-size gradient is still clipped by the fraction.  A
    non-finite gradient is zeroed and counted on the slot.
    """
    beta = 1.0 - h.one_minus_beta_gradclip
    norm = _norm(grad)
    if not math.isfinite(norm):
        slot.nonfinite_count += 1
        slot.gradclip_moving_max *= beta
        return np.zeros_like(grad), True
    slot.gradclip_moving_max = max(slot.gradclip_moving_max * beta, norm)
    threshold = h.grad_clip_fraction * slot.gradclip_moving_max
    if norm > threshold:
        return grad * (threshold / norm), True
    return grad, False


def ciao_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    h: HyperParams,
    state: InnerState,
) -> tuple[list[np.ndarray], StepStats]:
    """One inner optimizer step over all parameter tensors.

    Per tensor: clip the gradient, update the bias-corrected first moment,
    update the denominator for the selected mode, form the pre-LR update
    ``u = m_hat / (denom + eps)``, optionally scale by the layerwise trust
    ratio ``|p| / ema(|u|)`` floored at the minimum trust, and apply
    decoupled weight decay.  Returns new parameter tensors and step stats.
    """
    if len(params) != len(grads) or len(params) != len(state.slots):
        raise ValueError("params, grads, and state must have matching lengths")

    b1 = 1.0 - h.one_minus_beta1
    b2 = 1.0 - h.one_minus_beta2
    b_lamb = 1.0 - h.one_minus_beta_lamb
    lr = h.learning_rate
    eps = h.epsilon

    stats = StepStats()
    clipped_count = 0
    denom_ge_eps = 0
    total_elems = 0
    abs_u_sum = 0.0
    update_sq = 0.0
    param_sq = 0.0

    new_params: list[np.ndarray] = []
    for p, g, slot in zip(params, grads, state.slots):
        nf_before = slot.nonfinite_count
        g, was_clipped = clip_gradient(g, slot, h)
        if slot.nonfinite_count > nf_before:
            stats.nonfinite = True
        if was_clipped:
            clipped_count += 1

        slot.step_count += 1
        t = slot.step_count
        m = slot.first_moment
        m *= b1
        m += (1.0 - b1) * g
        m_hat = m / (1.0 - b1**t)

        if h.denominator_mode == "adam":
            v = slot.second_accumulator
            v *= b2
            v += (1.0 - b2) * g * g
            denom = np.sqrt(v / (1.0 - b2**t))
        elif h.denominator_mode == "adamax":
            np.maximum(b2 * slot.second_accumulator, np.abs(g), out=slot.second_accumulator)
            denom = slot.second_accumulator
        else:
            raise ValueError(f"unknown denominator_mode {h.denominator_mode!r}")

        shifted = denom + eps
        u = np.divide(m_hat, shifted, out=np.zeros_like(m_hat), where=shifted > 0)

        p_norm = _norm(p)
        if h.use_lamb_trust:
            u_norm = _norm(u)
            slot.lamb_update_norm_ema = (
                b_lamb * slot.lamb_update_norm_ema + (1.0 - b_lamb) * u_norm
            )
            if p_norm == 0.0:
                trust = 1.0
            else:
                trust = max(p_norm / (slot.lamb_update_norm_ema + TINY), h.lamb_min_trust)
        else:
            trust = 1.0

        delta = lr * trust * u + lr * h.weight_decay * p
        candidate = p - delta
        if not np.all(np.isfinite(candidate)):
            slot.nonfinite_count += 1
            stats.nonfinite = True
            new_params.append(p.copy())
            continue
        new_params.append(candidate)

        denom_ge_eps += int(np.count_nonzero(denom >= eps))
        total_elems += g.size
        abs_u_sum += float(np.sum(np.abs(u)))
        update_sq += float(np.sum(delta * delta))
        param_sq += p_norm * p_norm
        stats.log_trust_ratios.append(math.log(max(trust, TINY)))
        stats.cos_grad_momentum.append(_cosine(g, m))
        stats.cos_grad_update.append(_cosine(g, u))
        stats.cos_grad_param.append(_cosine(g, p))
        stats.tensor_sizes.append(g.size)

    n = max(len(params), 1)
    stats.fraction_clipped = clipped_count / n
    stats.fraction_denom_ge_eps = denom_ge_eps / max(total_elems, 1)
    stats.mean_abs_prelr_update = abs_u_sum / max(total_elems, 1)
    stats.update_norm = math.sqrt(update_sq)
    stats.param_norm = math.sqrt(param_sq)
    return new_params, stats


@dataclass
class AdamwHypers:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-2


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    h: AdamwHypers,
    state: InnerState,
) -> list[np.ndarray]:
    """Standard decoupled-weight-decay adaptive step.

    Also serves as the reference oracle for the inner optimizer in its
    AdamW-equivalent configuration (trust ratio off, "adam" denominator,
    clipping never triggered).
    """
    if len(params) != len(grads) or len(params) != len(state.slots):
        raise ValueError("params, grads, and state must have matching lengths")
    new_params = []
    for p, g, slot in zip(params, grads, state.slots):
        slot.step_count += 1
        t = slot.step_count
        m = slot.first_moment
        v = slot.second_accumulator
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * g * g
        m_hat = m / (1.0 - h.beta1**t)
        v_hat = v / (1.0 - h.beta2**t)
        candidate = p - h.learning_rate * (
            m_hat / (np.sqrt(v_hat) + h.epsilon) + h.weight_decay * p
        )
        if not np.all(np.isfinite(candidate)):
            slot.nonfinite_count += 1
            new_params.append(p.copy())
            continue
        new_params.append(candidate)
    return new_params


SCHEDULE_KINDS = (
    "constant",
    "multistep",
    "linear",
    "quadratic",
    "exponential",
    "cosine_to_zero",
    "cosine_to_tenth",
)

BASELINE_LEARNING_RATES = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)


def schedule_value(kind: str, base_lr: float, progress: float) -> float:
    """Learning rate of a named decay schedule at a progress in [0, 1]."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must be in [0, 1], got {progress}")
    if kind == "constant":
        return base_lr
    if kind == "multistep":
        # x0.1 at one third, x0.1 again at two thirds.
        if progress < 1.0 / 3.0:
            return base_lr
        if progress < 2.0 / 3.0:
            return base_lr * 0.1
        return base_lr * 0.01
    if kind == "linear":
        return base_lr * (1.0 - progress)
    if kind == "quadratic":
        return base_lr * (1.0 - progress) ** 2
    if kind == "exponential":
        return base_lr * 0.01**progress
    if kind == "cosine_to_zero":
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
    if kind == "cosine_to_tenth":
        return base_lr * (0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * progress)))
    raise ValueError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class BaselineSpec:
    """One cell of the evaluation baseline grid."""

    learning_rate: float
    schedule: str

    def label(self) -> str:
        return f"adamw_lr{self.learning_rate:g}_{self.schedule}"


def baseline_grid() -> list[BaselineSpec]:
    """The 35-cell grid: 5 peak learning rates x 7 decay schedules."""
    return [
        BaselineSpec(lr, kind)
        for lr in BASELINE_LEARNING_RATES
        for kind in SCHEDULE_KINDS
    ]
