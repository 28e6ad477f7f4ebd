"""Power-law learning-curve normalization and reward shaping.

A baseline run's (progress, validation loss) curve is fit with
``loss(u) = c + a * u**(-b)``.  Inverting the fit maps any final loss onto
an equivalent progress u*, which is rescaled so the baseline's first
recorded loss is worth 0 and its final fitted loss is worth 1.  Losses
better than the baseline's best extrapolate past 1; this is what makes the
reward comparable across tasks with wildly different loss scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

REWARD_FLOOR = -1.0
REWARD_CEILING = 10.0
EMA_BASELINE_BETA = 0.99
FALLBACK_B = 1e-6
N_C_CANDIDATES = 64


@dataclass
class LearningCurve:
    """Ordered (progress, validation loss) samples from one training run."""

    us: np.ndarray
    losses: np.ndarray

    @classmethod
    def from_points(cls, points) -> "LearningCurve":
        us = np.array([p[0] for p in points], dtype=float)
        losses = np.array([p[1] for p in points], dtype=float)
        return cls(us=us, losses=losses)

    def __post_init__(self):
        self.us = np.asarray(self.us, dtype=float)
        self.losses = np.asarray(self.losses, dtype=float)
        if self.us.shape != self.losses.shape or self.us.ndim != 1:
            raise ValueError("curve needs matching 1-d progress and loss arrays")
        if len(self.us) and not (np.all(self.us > 0.0) and np.all(self.us <= 1.0)):
            raise ValueError("progress values must lie in (0, 1]")
        if len(self.us) > 1 and not np.all(np.diff(self.us) > 0):
            raise ValueError("progress values must increase strictly")

    def __len__(self) -> int:
        return len(self.us)

    def final_loss(self) -> float:
        return float(self.losses[-1])

    def best_loss(self) -> float:
        finite = self.losses[np.isfinite(self.losses)]
        return float(finite.min()) if len(finite) else math.nan


@dataclass
class PowerLawFit:
    a: float
    b: float
    c: float
    u_min: float
    sse: float
    low_quality: bool = False

    def predict(self, u) -> np.ndarray:
        return self.c + self.a * np.asarray(u, dtype=float) ** (-self.b)


def _regress_log_log(us: np.ndarray, losses: np.ndarray, c: float):
    """Closed-form regression of log(loss - c) on log(progress)."""
    gap = losses - c
    if np.any(gap <= 0.0):
        return None
    x = np.log(us)
    y = np.log(gap)
    x_mean, y_mean = x.mean(), y.mean()
    denom = float(np.sum((x - x_mean) ** 2))
    if denom <= 0.0:
        return None
    slope = float(np.sum((x - x_mean) * (y - y_mean)) / denom)
    intercept = y_mean - slope * x_mean
    a, b = math.exp(intercept), -slope
    if not (math.isfinite(a) and math.isfinite(b)) or b <= 0.0 or a <= 0.0:
        return None
    return a, b


def _sse(us, losses, a, b, c) -> float:
    pred = c + a * us ** (-b)
    return float(np.sum((pred - losses) ** 2))


def _candidate_asymptotes(losses: np.ndarray) -> np.ndarray:
    lo = float(losses.min())
    if lo > 0.0:
        cands = np.concatenate(
            [[0.0], np.geomspace(lo * 1e-8, lo * (1.0 - 1e-9), N_C_CANDIDATES - 1)]
        )
    else:
        span = float(losses.max() - lo)
        scale = max(span, abs(lo), 1e-6)
        cands = lo - np.geomspace(scale * 1e-8, scale * 10.0, N_C_CANDIDATES)
    return cands


def fit_power_law(curve: LearningCurve) -> PowerLawFit:
    """Least-squares fit of ``c + a * u**(-b)`` with a > 0, b > 0.

    The asymptote c is scanned over a log-spaced grid below the minimum
    loss (closed-form log-log regression gives a and b per candidate) and
    then refined by golden-section search on the original-space SSE.
    Curves with no decreasing fit fall back to a flat, flagged fit.
    """
    if len(curve) < 3:
        raise ValueError("power-law fit needs at least 3 curve points")
    if not np.all(np.isfinite(curve.losses)):
        raise ValueError("power-law fit needs finite losses")
    us, losses = curve.us, curve.losses
    lo = float(losses.min())

    def evaluate(c: float):
        ab = _regress_log_log(us, losses, c)
        if ab is None:
            return None
        a, b = ab
        return _sse(us, losses, a, b, c), a, b

    cands = _candidate_asymptotes(losses)
    best = None
    calibrated = None
    for c in cands:
        res = evaluate(c)
        if res is None:
            continue
        if best is None or res[0] < best[0]:
            best = res
            calibrated = c
    if best is None:
        span = float(losses.max() - lo)
        c = lo - max(span, abs(lo), 1e-6) * 1e-3
        a = max(float(losses.mean()) - c, 1e-12)
        return PowerLawFit(
            a=a, b=FALLBACK_B, c=c, u_min=float(us[0]),
            sse=_sse(us, losses, a, FALLBACK_B, c), low_quality=True,
        )

    # Golden-section refinement of SSE(c) between the grid neighbors.
    idx = int(np.searchsorted(cands, calibrated))
    lo_c = cands[max(idx - 1, 0)]
    hi_c = cands[min(idx + 1, len(cands) - 1)]
    if hi_c <= lo_c:
        lo_c, hi_c = min(lo_c, hi_c), max(lo_c, hi_c) + 1e-12
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi_c - phi * (hi_c - lo_c)
    x2 = lo_c + phi * (hi_c - lo_c)
    f1, f2 = evaluate(x1), evaluate(x2)
    for _ in range(80):
        v1 = f1[0] if f1 is not None else math.inf
        v2 = f2[0] if f2 is not None else math.inf
        if v1 < v2:
            hi_c, x2, f2 = x2, x1, f1
            x1 = hi_c - phi * (hi_c - lo_c)
            f1 = evaluate(x1)
        else:
            lo_c, x1, f1 = x1, x2, f2
            x2 = lo_c + phi * (hi_c - lo_c)
            f2 = evaluate(x2)
    for res, c in ((f1, x1), (f2, x2)):
        if res is not None and res[0] < best[0]:
            best, calibrated = res, c
    sse, a, b = best
    return PowerLawFit(a=a, b=b, c=float(calibrated), u_min=float(us[0]), sse=sse)


def reward_from_loss(
    fit: PowerLawFit,
    curve: LearningCurve,
    final_loss: float,
    floor: float = REWARD_FLOOR,
    ceiling: float = REWARD_CEILING,
) -> float:
    """Map a final loss to normalized equivalent progress on the baseline.

    0 at the baseline's first fitted loss, 1 at its final fitted loss,
    above 1 for losses the baseline never reached.  Non-finite losses hit
    the floor; losses at or below the fitted asymptote cap at the ceiling.
    """
    if not math.isfinite(final_loss):
        return floor
    u0 = float(curve.us[0])
    gap = final_loss - fit.c
    if gap <= 0.0:
        return ceiling
    log_u_star = -(math.log(gap) - math.log(fit.a)) / fit.b
    log_u_star = min(max(log_u_star, -700.0), 700.0)
    u_star = math.exp(log_u_star)
    r = (u_star - u0) / (1.0 - u0)
    return min(max(r, floor), ceiling)


def ema_baseline_sync(current: dict, baseline: dict, beta: float = EMA_BASELINE_BETA) -> dict:
    """baseline <- beta * baseline + (1 - beta) * current, elementwise."""
    if set(current) != set(baseline):
        raise ValueError("weight dictionaries must have matching keys")
    out = {}
    for key, cur in current.items():
        base = baseline[key]
        out[key] = beta * np.asarray(base) + (1.0 - beta) * np.asarray(cur)
    return out


def shaped_rewards(
    best_so_far_losses,
    fit: PowerLawFit,
    curve: LearningCurve,
    floor: float = REWARD_FLOOR,
    ceiling: float = REWARD_CEILING,
) -> np.ndarray:
    """Potential-based shaping: per-step reward is the potential increment.

    The potential after step k is the reward of the best validation loss
    seen so far; entries that are None (no fresh measurement) carry the
    previous potential, contributing zero shaping.  With discounting off,
    the sequence telescopes: its sum equals the final reward exactly.
    """
    rewards = np.zeros(len(best_so_far_losses))
    potential = 0.0
    for k, loss in enumerate(best_so_far_losses):
        if loss is None or not math.isfinite(loss):
            new_potential = potential
        else:
            new_potential = reward_from_loss(fit, curve, loss, floor, ceiling)
        rewards[k] = new_potential - potential
        potential = new_potential
    return rewards
