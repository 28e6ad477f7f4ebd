"""Discrete relative hyperparameter actions, initial noise, bounds, checkpoints.

The controller never sets hyperparameter values directly.  Each head either
scales its hyperparameter by a constant or shifts it in logit space, and the
result is clamped to a fixed bounds table.  Initial values are randomized
per task so absolute values cannot be inferred from action history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .inner_opt import HyperParams, InnerState

SCALE = "scale"
LOGIT_SHIFT = "logit_shift"
RESTART = "restart"


@dataclass(frozen=True)
class ActionHead:
    name: str
    kind: str
    values: tuple[float, ...]

    @property
    def arity(self) -> int:
        return len(self.values)


RESTART_SLOTS = 3
RESTART_OPS = ("save", "load", "swap")
RESTART_ARITY = 1 + RESTART_SLOTS * len(RESTART_OPS)

# Per-hyperparameter action heads.  The learning-rate head keeps its identity
# action; most other heads drop it so the controller must stay reactive.
HYPER_HEADS = (
    ActionHead("learning_rate", SCALE, (0.5, 0.707, 0.9, 1.0, 1.1, 1.414, 2.0)),
    ActionHead("weight_decay", SCALE, (0.5, 2.0)),
    ActionHead("epsilon", SCALE, (0.5, 2.0)),
    ActionHead("one_minus_beta1", SCALE, (0.5, 2.0)),
    ActionHead("one_minus_beta2", SCALE, (0.5, 2.0)),
    ActionHead("grad_clip_fraction", LOGIT_SHIFT, (-1.0, -0.3, 0.3, 1.0)),
    ActionHead("one_minus_beta_gradclip", SCALE, (0.5, 1.0, 2.0)),
    ActionHead("one_minus_beta_lamb", SCALE, (1.0 / 1.5, 1.0, 1.5)),
)

# Clamp ranges.  Spans cover the initial-noise ranges with headroom.
HYPER_BOUNDS: dict[str, tuple[float, float]] = {
    "learning_rate": (1e-7, 1e1),
    "weight_decay": (0.0, 1.0),
    "epsilon": (1e-12, 1.0),
    "one_minus_beta1": (1e-4, 0.5),
    "one_minus_beta2": (1e-4, 0.5),
    "grad_clip_fraction": (0.01, 0.99),
    "one_minus_beta_gradclip": (1e-4, 0.5),
    "one_minus_beta_lamb": (1e-4, 0.5),
    "lamb_min_trust": (1e-6, 1.0),
}

# Initial randomization: multiplicative (log-uniform) for scale-type heads,
# additive in logit space (uniform) for the clip fraction.
NOISE_RANGES: dict[str, tuple[str, float, float]] = {
    "learning_rate": (SCALE, 1e-2, 1e2),
    "weight_decay": (SCALE, 0.1, 10.0),
    "epsilon": (SCALE, 0.1, 10.0),
    "one_minus_beta1": (SCALE, 0.1, 10.0),
    "one_minus_beta2": (SCALE, 0.1, 10.0),
    "grad_clip_fraction": (LOGIT_SHIFT, -1.0, 1.0),
    "one_minus_beta_gradclip": (SCALE, 0.5, 2.0),
    "one_minus_beta_lamb": (SCALE, 0.5, 2.0),
}


def _logit(x: float) -> float:
    x = min(max(x, 1e-12), 1.0 - 1e-12)
    return math.log(x / (1.0 - x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def clamp_hypers(h: HyperParams) -> HyperParams:
    out = h.copy()
    for name, (lo, hi) in HYPER_BOUNDS.items():
        setattr(out, name, min(max(getattr(out, name), lo), hi))
    return out


@dataclass(frozen=True)
class ActionSpace:
    """Ordered action heads: a subset of the hyperparameter heads plus,
    optionally, the 10-way checkpoint/restart head."""

    heads: tuple[ActionHead, ...]

    @classmethod
    def full(cls) -> "ActionSpace":
        return cls(heads=HYPER_HEADS + (ActionHead("restart", RESTART, tuple(range(RESTART_ARITY))),))

    @classmethod
    def reduced(cls, names: list[str], include_restart: bool = False) -> "ActionSpace":
        by_name = {head.name: head for head in HYPER_HEADS}
        heads = [by_name[n] for n in names]
        if include_restart:
            heads.append(ActionHead("restart", RESTART, tuple(range(RESTART_ARITY))))
        return cls(heads=tuple(heads))

    @property
    def arities(self) -> list[int]:
        return [head.arity for head in self.heads]

    @property
    def hyper_heads(self) -> list[ActionHead]:
        return [head for head in self.heads if head.kind != RESTART]

    @property
    def has_restart(self) -> bool:
        return any(head.kind == RESTART for head in self.heads)

    def head(self, name: str) -> ActionHead:
        for h in self.heads:
            if h.name == name:
                return h
        raise KeyError(name)


def apply_action(h: HyperParams, head: ActionHead, choice: int) -> HyperParams:
    """Apply one discrete relative update and clamp to bounds."""
    if not 0 <= choice < head.arity:
        raise IndexError(f"choice {choice} out of range for head {head.name}")
    if head.kind == RESTART:
        raise ValueError("restart actions are applied via restart_action")
    out = h.copy()
    value = getattr(out, head.name)
    c = head.values[choice]
    if head.kind == SCALE:
        value = value * c
    else:
        value = _sigmoid(_logit(value) + c)
    setattr(out, head.name, value)
    return clamp_hypers(out)


def sample_initial_noise(
    rng: np.random.Generator, names: list[str] | None = None
) -> dict[str, float]:
    """Draw per-hyperparameter initial noise.

    Scale-type entries get a log-uniform multiplier; logit-type entries get
    a uniform additive offset.  ``names`` restricts which hyperparameters
    are randomized (default: all of them).
    """
    if names is None:
        names = list(NOISE_RANGES)
    noise = {}
    for name in names:
        kind, lo, hi = NOISE_RANGES[name]
        if kind == SCALE:
            noise[name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        else:
            noise[name] = float(rng.uniform(lo, hi))
    return noise


def apply_initial_noise(h: HyperParams, noise: dict[str, float]) -> HyperParams:
    out = h.copy()
    for name, value in noise.items():
        kind, _, _ = NOISE_RANGES[name]
        current = getattr(out, name)
        if kind == SCALE:
            setattr(out, name, current * value)
        else:
            setattr(out, name, _sigmoid(_logit(current) + value))
    return clamp_hypers(out)


def noise_vector(noise: dict[str, float], names: list[str]) -> np.ndarray:
    """Fixed-order encoding of an initial-noise draw (for the value network).

    Multipliers are encoded as their log, offsets as-is; missing names are 0.
    """
    out = np.zeros(len(names))
    for i, name in enumerate(names):
        if name not in noise:
            continue
        kind, _, _ = NOISE_RANGES[name]
        out[i] = math.log(noise[name]) if kind == SCALE else noise[name]
    return out


@dataclass
class LiveState:
    """The mutable training state a restart action operates on."""

    params: list[np.ndarray]
    inner_state: InnerState
    hypers: HyperParams


@dataclass
class Checkpoint:
    params: list[np.ndarray]
    inner_state: InnerState
    hypers: HyperParams
    progress: float
    loss_percentile: float


@dataclass
class CheckpointStore:
    """Three independent snapshot slots with save/load/swap semantics.

    Snapshots are deep copies; load and swap on an empty slot are no-ops
    (flagged via the return value of :func:`restart_action`).
    """

    slots: list[Checkpoint | None] = field(default_factory=lambda: [None] * RESTART_SLOTS)

    def slot_summaries(self) -> list[tuple[float, float]]:
        """(progress, loss percentile) per slot; empty slots read (0, 0.5)."""
        out = []
        for ckpt in self.slots:
            if ckpt is None:
                out.append((0.0, 0.5))
            else:
                out.append((ckpt.progress, ckpt.loss_percentile))
        return out


def _snapshot(live: LiveState, progress: float, loss_percentile: float) -> Checkpoint:
    return Checkpoint(
        params=[p.copy() for p in live.params],
        inner_state=live.inner_state.copy(),
        hypers=live.hypers.copy(),
        progress=progress,
        loss_percentile=loss_percentile,
    )


def restart_action(
    store: CheckpointStore,
    live: LiveState,
    choice: int,
    progress: float = 0.0,
    loss_percentile: float = 0.5,
) -> str:
    """Apply one of the 10 restart actions; returns a short event label.

    Index 0 is a no-op; the rest map to (slot, op) with ops save/load/swap.
    Progress and the step budget are never rewound: restarting costs budget.
    """
    if not 0 <= choice < RESTART_ARITY:
        raise IndexError(f"restart choice {choice} out of range")
    if choice == 0:
        return "noop"
    slot = (choice - 1) // len(RESTART_OPS)
    op = RESTART_OPS[(choice - 1) % len(RESTART_OPS)]
    if op == "save":
        store.slots[slot] = _snapshot(live, progress, loss_percentile)
        return f"save:{slot}"
    ckpt = store.slots[slot]
    if ckpt is None:
        return f"{op}-empty:{slot}"
    if op == "load":
        live.params = [p.copy() for p in ckpt.params]
        live.inner_state = ckpt.inner_state.copy()
        live.hypers = ckpt.hypers.copy()
        return f"load:{slot}"
    # swap: exchange payloads; no copies needed because ownership transfers.
    new_ckpt = Checkpoint(
        params=live.params,
        inner_state=live.inner_state,
        hypers=live.hypers,
        progress=progress,
        loss_percentile=loss_percentile,
    )
    live.params = ckpt.params
    live.inner_state = ckpt.inner_state
    live.hypers = ckpt.hypers
    store.slots[slot] = new_ckpt
    return f"swap:{slot}"
