"""LSTM controller with per-head discrete outputs, trained by clipped PPO.

The policy and value function are separate single-layer LSTM networks (the
value network sees a wider, non-robust input).  All forward and reverse
passes are written directly in numpy; gradients flow through the LSTM over
the whole episode.  Hidden state carries across outer steps within an
episode and resets between episodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .actions import ActionSpace
from .features import VectorNormalizer
from .inner_opt import AdamwHypers, InnerState, adamw_step

DEFAULT_HIDDEN = 64
FULL_SCALE_HIDDEN = 256
CHECKPOINT_VERSION = 1


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.sum(np.exp(shifted)))


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    a = rng.normal(size=(max(shape), max(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q[: shape[0], : shape[1]]


def init_lstm_net(
    rng: np.random.Generator,
    prefix: str,
    input_len: int,
    hidden: int,
    head_arities: dict[str, int],
    head_gain: float = 0.01,
) -> dict[str, np.ndarray]:
    """Orthogonal recurrence, Glorot-ish input weights, small-gain heads.

    The forget-gate bias starts at 1 so memory is open early in training.
    """
    w: dict[str, np.ndarray] = {}
    scale_in = np.sqrt(2.0 / (input_len + hidden))
    w[f"{prefix}in_w"] = rng.normal(size=(input_len, hidden)) * scale_in
    w[f"{prefix}in_b"] = np.zeros(hidden)
    scale_x = np.sqrt(2.0 / (hidden + 4 * hidden))
    w[f"{prefix}x_w"] = rng.normal(size=(hidden, 4 * hidden)) * scale_x
    w[f"{prefix}h_w"] = np.concatenate(
        [_orthogonal(rng, (hidden, hidden)) for _ in range(4)], axis=1
    )
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    w[f"{prefix}b"] = b
    for name, arity in head_arities.items():
        w[f"{prefix}head_{name}_w"] = rng.normal(size=(hidden, arity)) * head_gain
        w[f"{prefix}head_{name}_b"] = np.zeros(arity)
    return w


def lstm_step(weights, prefix, x, h_prev, c_prev, hidden):
    """One LSTM step; returns (h, c, cache) with everything backward needs."""
    xp = x @ weights[f"{prefix}in_w"] + weights[f"{prefix}in_b"]
    z = xp @ weights[f"{prefix}x_w"] + h_prev @ weights[f"{prefix}h_w"] + weights[f"{prefix}b"]
    i = _sigmoid(z[:hidden])
    f = _sigmoid(z[hidden : 2 * hidden])
    g = np.tanh(z[2 * hidden : 3 * hidden])
    o = _sigmoid(z[3 * hidden :])
    c = f * c_prev + i * g
    hc = np.tanh(c)
    h = o * hc
    cache = (x, xp, h_prev, c_prev, i, f, g, o, c, hc)
    return h, c, cache


def lstm_step_backward(weights, prefix, grads, cache, d_h, d_c, hidden):
    """Accumulates weight gradients; returns (d_h_prev, d_c_prev)."""
    x, xp, h_prev, c_prev, i, f, g, o, c, hc = cache
    d_o = d_h * hc
    d_c = d_c + d_h * o * (1.0 - hc * hc)
    d_i = d_c * g
    d_g = d_c * i
    d_f = d_c * c_prev
    d_c_prev = d_c * f
    d_z = np.concatenate(
        [
            d_i * i * (1.0 - i),
            d_f * f * (1.0 - f),
            d_g * (1.0 - g * g),
            d_o * o * (1.0 - o),
        ]
    )
    grads[f"{prefix}b"] += d_z
    grads[f"{prefix}x_w"] += np.outer(xp, d_z)
    grads[f"{prefix}h_w"] += np.outer(h_prev, d_z)
    d_xp = weights[f"{prefix}x_w"] @ d_z
    d_h_prev = weights[f"{prefix}h_w"] @ d_z
    grads[f"{prefix}in_w"] += np.outer(x, d_xp)
    grads[f"{prefix}in_b"] += d_xp
    return d_h_prev, d_c_prev


@dataclass
class Trajectory:
    """One episode of controller interaction, as PPO consumes it."""

    policy_features: np.ndarray  # (T, F_pi)
    actions: list[dict[str, int]]
    logps: np.ndarray  # (T,) joint log-probability at sampling time
    values: np.ndarray  # (T,) value estimates at rollout time
    rewards: np.ndarray  # (T,) shaped rewards
    value_features: np.ndarray | None = None  # (T, F_v), training only
    terminal: bool = True  # episodes are fixed-length; the last step ends one
    reuse_count: int = 0

    def __post_init__(self):
        t = len(self.actions)
        if not (
            self.policy_features.shape[0] == t
            and self.logps.shape == (t,)
            and self.values.shape == (t,)
            and self.rewards.shape == (t,)
        ):
            raise ValueError("trajectory field lengths disagree")
        if not np.all(np.isfinite(self.logps)):
            raise ValueError("non-finite log-probabilities in trajectory")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


@dataclass
class PpoConfig:
    clip_ratio: float = 0.2
    epochs: int = 4
    minibatch_episodes: int | None = None  # None: one full-batch step per epoch
    learning_rate: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_reuse: int = 4
    gamma: float = 1.0
    normalize_advantages: bool = True
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if self.epochs > self.max_reuse:
            raise ValueError("epochs may not exceed the environment-reuse cap")
        if self.gamma != 1.0:
            raise ValueError("this controller is trained undiscounted (gamma = 1)")
        if self.minibatch_episodes is not None and self.minibatch_episodes < 1:
            raise ValueError("minibatch_episodes must be positive")


class LstmController:
    """Policy network plus separate value network, with their normalizers."""

    def __init__(
        self,
        space: ActionSpace,
        policy_input_len: int,
        value_input_len: int,
        hidden: int = DEFAULT_HIDDEN,
        seed: int = 0,
        feature_layout_hash: str = "",
    ):
        self.space = space
        self.hidden = hidden
        self.policy_input_len = policy_input_len
        self.value_input_len = value_input_len
        self.feature_layout_hash = feature_layout_hash
        rng = np.random.default_rng(seed)
        head_arities = {head.name: head.arity for head in space.heads}
        self.weights = init_lstm_net(rng, "pi_", policy_input_len, hidden, head_arities)
        self.weights.update(init_lstm_net(rng, "v_", value_input_len, hidden, {"value": 1}))
        self.policy_normalizer = VectorNormalizer(policy_input_len)
        self.value_normalizer: VectorNormalizer | None = None  # set by the harness

    def weight_names(self) -> list[str]:
        return sorted(self.weights)

    def initial_hidden(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(self.hidden), np.zeros(self.hidden)

    def policy_step(self, features: np.ndarray, hidden_state):
        """Per-head probabilities and the advanced hidden state."""
        features = np.asarray(features, dtype=float)
        if features.shape != (self.policy_input_len,):
            raise ValueError(
                f"expected features of length {self.policy_input_len}, got {features.shape}"
            )
        if not np.all(np.isfinite(features)):
            raise ValueError("non-finite features passed to policy")
        h, c = hidden_state
        h, c, _ = lstm_step(self.weights, "pi_", features, h, c, self.hidden)
        probs = {}
        for head in self.space.heads:
            logits = h @ self.weights[f"pi_head_{head.name}_w"] + self.weights[
                f"pi_head_{head.name}_b"
            ]
            probs[head.name] = np.exp(_log_softmax(logits))
        return probs, (h, c)

    def value_step(self, features: np.ndarray, hidden_state):
        features = np.asarray(features, dtype=float)
        h, c = hidden_state
        h, c, _ = lstm_step(self.weights, "v_", features, h, c, self.hidden)
        v = h @ self.weights["v_head_value_w"] + self.weights["v_head_value_b"]
        return float(v[0]), (h, c)

    def sample_action(self, probs: dict[str, np.ndarray], rng: np.random.Generator):
        """Draw one choice per head; returns (action dict, joint logp)."""
        action, logp = {}, 0.0
        for head in self.space.heads:
            p = probs[head.name]
            choice = int(rng.choice(len(p), p=p / p.sum()))
            action[head.name] = choice
            logp += float(np.log(max(p[choice], 1e-300)))
        return action, logp

    def greedy_action(self, probs: dict[str, np.ndarray]):
        return {head.name: int(np.argmax(probs[head.name])) for head in self.space.heads}

    # -- serialization ------------------------------------------------------

    def manifest(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "hidden": self.hidden,
            "policy_input_len": self.policy_input_len,
            "value_input_len": self.value_input_len,
            "feature_layout_hash": self.feature_layout_hash,
            "heads": [[h.name, h.kind, list(h.values)] for h in self.space.heads],
        }

    def save(self, path) -> None:
        arrays = {f"weight::{k}": v for k, v in self.weights.items()}
        for k, v in self.policy_normalizer.state_dict().items():
            arrays[f"pnorm::{k}"] = v
        if self.value_normalizer is not None:
            for k, v in self.value_normalizer.state_dict().items():
                arrays[f"vnorm::{k}"] = v
        np.savez(path, __manifest__=json.dumps(self.manifest()), **arrays)

    @classmethod
    def load(cls, path, expected_layout_hash: str | None = None) -> "LstmController":
        from .actions import ActionHead  # local to avoid a cycle at import time

        data = np.load(path, allow_pickle=False)
        manifest = json.loads(str(data["__manifest__"]))
        if manifest["version"] != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {manifest['version']} not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        if expected_layout_hash is not None and manifest["feature_layout_hash"] != expected_layout_hash:
            raise ValueError(
                "checkpoint feature layout does not match this configuration: "
                f"{manifest['feature_layout_hash']} != {expected_layout_hash}"
            )
        heads = tuple(
            ActionHead(name, kind, tuple(values)) for name, kind, values in manifest["heads"]
        )
        controller = cls(
            ActionSpace(heads=heads),
            manifest["policy_input_len"],
            manifest["value_input_len"],
            hidden=manifest["hidden"],
            feature_layout_hash=manifest["feature_layout_hash"],
        )
        controller.weights = {
            k.split("::", 1)[1]: data[k] for k in data.files if k.startswith("weight::")
        }
        pnorm = {k.split("::", 1)[1]: data[k] for k in data.files if k.startswith("pnorm::")}
        controller.policy_normalizer.load_state_dict(pnorm)
        vnorm = {k.split("::", 1)[1]: data[k] for k in data.files if k.startswith("vnorm::")}
        if vnorm:
            controller.value_normalizer = VectorNormalizer(manifest["value_input_len"])
            controller.value_normalizer.load_state_dict(vnorm)
        arities = {h.name: h.arity for h in controller.space.heads}
        for name, arity in arities.items():
            if controller.weights[f"pi_head_{name}_w"].shape[1] != arity:
                raise ValueError(f"head {name} arity mismatch in checkpoint")
        return controller


def _forward_policy_episode(controller: LstmController, features: np.ndarray):
    """Logits for every step and head, plus caches for the reverse pass."""
    h, c = controller.initial_hidden()
    caches, logits_seq, hs = [], [], []
    for t in range(features.shape[0]):
        h, c, cache = lstm_step(controller.weights, "pi_", features[t], h, c, controller.hidden)
        caches.append(cache)
        hs.append(h)
        logits_seq.append(
            {
                head.name: h @ controller.weights[f"pi_head_{head.name}_w"]
                + controller.weights[f"pi_head_{head.name}_b"]
                for head in controller.space.heads
            }
        )
    return logits_seq, hs, caches


def _forward_value_episode(controller: LstmController, features: np.ndarray):
    h, c = controller.initial_hidden()
    caches, values, hs = [], [], []
    for t in range(features.shape[0]):
        h, c, cache = lstm_step(controller.weights, "v_", features[t], h, c, controller.hidden)
        caches.append(cache)
        hs.append(h)
        v = h @ controller.weights["v_head_value_w"] + controller.weights["v_head_value_b"]
        values.append(float(v[0]))
    return np.array(values), hs, caches


def ppo_loss_and_grads(
    controller: LstmController,
    trajectories: list[Trajectory],
    advantages: list[np.ndarray],
    config: PpoConfig,
):
    """Clipped-surrogate PPO objective and its exact gradients.

    The objective is minimized:  -surrogate - entropy_coef * entropy
    + value_coef * value_error^2, averaged over every step in the batch.
    Returns (loss, grads dict, diagnostics dict).
    """
    weights = controller.weights
    grads = {k: np.zeros_like(v) for k, v in weights.items()}
    space = controller.space
    eps = config.clip_ratio

    total_steps = sum(len(t) for t in trajectories)
    loss = 0.0
    clip_hits = 0
    kl_sum = 0.0
    entropy_sum = 0.0
    value_loss_sum = 0.0

    for traj, adv in zip(trajectories, advantages):
        logits_seq, hs, caches = _forward_policy_episode(controller, traj.policy_features)
        t_len = len(traj)
        d_h_by_step = [np.zeros(controller.hidden) for _ in range(t_len)]

        for t in range(t_len):
            logp_new = 0.0
            head_info = {}
            for head in space.heads:
                logp_vec = _log_softmax(logits_seq[t][head.name])
                p = np.exp(logp_vec)
                a = traj.actions[t][head.name]
                logp_new += logp_vec[a]
                head_info[head.name] = (logp_vec, p, a)

            ratio = float(np.exp(logp_new - traj.logps[t]))
            unclipped = ratio * adv[t]
            clipped = float(np.clip(ratio, 1.0 - eps, 1.0 + eps)) * adv[t]
            surrogate = min(unclipped, clipped)
            loss += -surrogate / total_steps
            if unclipped > clipped:
                clip_hits += 1
            kl_sum += float(traj.logps[t] - logp_new)

            # d(-surrogate)/d logp_new; zero when the clipped branch is active.
            coef = -ratio * adv[t] / total_steps if unclipped <= clipped else 0.0

            for head in space.heads:
                logp_vec, p, a = head_info[head.name]
                d_logits = coef * ((np.arange(len(p)) == a).astype(float) - p)
                entropy = -float(np.sum(p * logp_vec))
                entropy_sum += entropy / len(space.heads)
                loss += -config.entropy_coef * entropy / total_steps
                d_logits += (
                    config.entropy_coef * p * (logp_vec + entropy) / total_steps
                )
                grads[f"pi_head_{head.name}_w"] += np.outer(hs[t], d_logits)
                grads[f"pi_head_{head.name}_b"] += d_logits
                d_h_by_step[t] += weights[f"pi_head_{head.name}_w"] @ d_logits

        d_h = np.zeros(controller.hidden)
        d_c = np.zeros(controller.hidden)
        for t in reversed(range(t_len)):
            d_h = d_h + d_h_by_step[t]
            d_h, d_c = lstm_step_backward(
                weights, "pi_", grads, caches[t], d_h, d_c, controller.hidden
            )

        if traj.value_features is not None:
            returns = traj.episode_return
            values, v_hs, v_caches = _forward_value_episode(controller, traj.value_features)
            d_v_h = [np.zeros(controller.hidden) for _ in range(t_len)]
            for t in range(t_len):
                err = values[t] - returns
                loss += config.value_coef * err * err / total_steps
                value_loss_sum += err * err
                d_v = 2.0 * config.value_coef * err / total_steps
                grads["v_head_value_w"] += d_v * v_hs[t][:, None]
                grads["v_head_value_b"] += np.array([d_v])
                d_v_h[t] += d_v * weights["v_head_value_w"][:, 0]
            d_h = np.zeros(controller.hidden)
            d_c = np.zeros(controller.hidden)
            for t in reversed(range(t_len)):
                d_h = d_h + d_v_h[t]
                d_h, d_c = lstm_step_backward(
                    weights, "v_", grads, v_caches[t], d_h, d_c, controller.hidden
                )

    diagnostics = {
        "loss": loss,
        "clip_fraction": clip_hits / max(total_steps, 1),
        "approx_kl": kl_sum / max(total_steps, 1),
        "entropy": entropy_sum / max(total_steps, 1),
        "value_loss": value_loss_sum / max(total_steps, 1),
    }
    return loss, grads, diagnostics


def controller_backward(
    controller: LstmController,
    trajectories: list[Trajectory],
    config: PpoConfig,
    advantages: list[np.ndarray] | None = None,
):
    """Gradients of the PPO objective for a trajectory batch."""
    if advantages is None:
        advantages = compute_advantages(trajectories, config)
    return ppo_loss_and_grads(controller, trajectories, advantages, config)


def compute_advantages(trajectories: list[Trajectory], config: PpoConfig):
    """Advantage = undiscounted episode return minus the value estimate."""
    advs = [np.full(len(t), t.episode_return) - t.values for t in trajectories]
    if config.normalize_advantages:
        flat = np.concatenate(advs)
        mean, std = flat.mean(), flat.std()
        advs = [(a - mean) / (std + 1e-8) for a in advs]
    return advs


class ControllerOptimizer:
    """Adam over the controller's weight dictionary (decay-free)."""

    def __init__(self, controller: LstmController, learning_rate: float):
        self.names = controller.weight_names()
        self.hypers = AdamwHypers(learning_rate=learning_rate, weight_decay=0.0)
        self.state = InnerState.for_params([controller.weights[n] for n in self.names])

    def step(self, controller: LstmController, grads: dict[str, np.ndarray]) -> None:
        params = [controller.weights[n] for n in self.names]
        glist = [grads[n] for n in self.names]
        new_params = adamw_step(params, glist, self.hypers, self.state)
        for name, p in zip(self.names, new_params):
            controller.weights[name] = p


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def ppo_update(
    controller: LstmController,
    trajectories: list[Trajectory],
    config: PpoConfig,
    optimizer: ControllerOptimizer,
):
    """Several epochs of clipped-surrogate updates over one rollout batch.

    Each trajectory is consumed once per epoch (whether in one full-batch
    step or split across minibatches), so environment reuse equals
    ``epochs`` and stays within the configured cap (audited per trajectory).
    """
    advantages = compute_advantages(trajectories, config)
    chunk = config.minibatch_episodes or len(trajectories)
    diagnostics_log = []
    for _ in range(config.epochs):
        for start in range(0, len(trajectories), chunk):
            batch = trajectories[start : start + chunk]
            batch_advs = advantages[start : start + chunk]
            for traj in batch:
                traj.reuse_count += 1
                if traj.reuse_count > config.max_reuse:
                    raise RuntimeError("environment reuse cap exceeded")
            loss, grads, diagnostics = ppo_loss_and_grads(
                controller, batch, batch_advs, config
            )
            if not np.isfinite(loss):
                diagnostics["skipped"] = True
                diagnostics_log.append(diagnostics)
                continue
            diagnostics["grad_norm"] = clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(controller, grads)
            diagnostics_log.append(diagnostics)
    return diagnostics_log
