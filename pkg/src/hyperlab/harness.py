"""Orchestration: episodes, outer PPO training, and the speedup evaluation.

An episode interleaves inner optimizer steps with outer controller steps.
Task-level stochasticity (batch draws, gradient noise) runs on a stream
seeded by the task, independent of action sampling and of the noise-scale
probes, so a run and its exported-schedule replay consume identical draws
and produce bit-identical learning curves.
"""

from __future__ import annotations

import copy
import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .actions import (
    ActionSpace,
    CheckpointStore,
    LiveState,
    apply_action,
    apply_initial_noise,
    restart_action,
    sample_initial_noise,
)
from .features import FeaturePipeline, RunSnapshot, ValueExtras, VectorNormalizer, estimate_noise_scale, policy_layout, value_extras_layout
from .inner_opt import (
    AdamwHypers,
    BaselineSpec,
    HyperParams,
    InnerState,
    adamw_step,
    baseline_grid,
    ciao_step,
    schedule_value,
)
from .policy import ControllerOptimizer, LstmController, PpoConfig, Trajectory, ppo_update
from .reward import LearningCurve, PowerLawFit, fit_power_law, ema_baseline_sync, reward_from_loss, shaped_rewards
from .schedule_file import ScheduleFile, ScheduleRecord
from .tasks import TaskDistributionConfig, encoding_length, sample_task

WORKERS_ENV_VAR = "HYPERLAB_WORKERS"


@dataclass
class EpisodeConfig:
    """Outer/inner step structure of one episode."""

    outer_steps: int = 16
    inner_steps_per_outer: int = 16
    stat_every: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.outer_steps < 2:
            raise ValueError("episodes need at least 2 outer steps")
        if self.inner_steps_per_outer < 1 or self.stat_every < 1:
            raise ValueError("inner step counts must be positive")

    @property
    def total_inner_steps(self) -> int:
        return self.outer_steps * self.inner_steps_per_outer


@dataclass
class PolicyDriver:
    """Drives outer steps from a controller; optionally collects V inputs."""

    controller: LstmController
    greedy: bool = False
    collect_values: bool = False
    extras_fn: object = None  # (outer index, best-so-far loss) -> ValueExtras
    update_normalizers: bool = True


@dataclass
class ScheduleDriver:
    """Replays an exported schedule; restart events apply on the source task."""

    schedule: ScheduleFile
    apply_restarts: bool = True


class StaticDriver:
    """No outer actions at all: the initial hyperparameters run unchanged."""


@dataclass
class CurveRow:
    step: int
    progress: float
    train_loss: float
    valid_loss: float
    hypers: HyperParams


@dataclass
class EpisodeResult:
    curve: LearningCurve
    curve_rows: list[CurveRow]
    trajectory: Trajectory | None
    hyper_records: list[tuple[float, HyperParams]]
    restart_events: list[tuple[int, int]]
    best_by_outer: list[float | None]
    final_valid_loss: float
    final_params: list[np.ndarray]
    initial_params_hash: str
    inner_steps_run: int


def _params_hash(params: list[np.ndarray]) -> str:
    digest = hashlib.sha256()
    for p in params:
        digest.update(p.tobytes())
    return digest.hexdigest()[:16]


def _global_norm(params: list[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(p * p)) for p in params))


def run_episode(
    task,
    initial_hypers: HyperParams,
    driver,
    cfg: EpisodeConfig,
    space: ActionSpace,
    task_encoding_len: int = 0,
) -> EpisodeResult:
    """One full inner-training run under a controller, schedule, or nothing.

    Divergence never aborts the run: NaN losses flow into the feature
    pipeline's is_nan channels and, downstream, into the reward floor.
    """
    is_policy = isinstance(driver, PolicyDriver)
    is_schedule = isinstance(driver, ScheduleDriver)

    params = task.init_params()
    live = LiveState(
        params=params,
        inner_state=InnerState.for_params(params),
        hypers=initial_hypers.copy(),
    )
    initial_hash = _params_hash(live.params)
    store = CheckpointStore()

    data_ss, probe_ss = np.random.SeedSequence(task.seed).spawn(2)
    data_rng = np.random.default_rng(data_ss)
    probe_rng = np.random.default_rng(probe_ss)
    action_rng = np.random.default_rng(cfg.seed)

    pipeline = None
    hidden = v_hidden = None
    if is_policy:
        controller = driver.controller
        pipeline = FeaturePipeline(
            space,
            policy_normalizer=controller.policy_normalizer,
            value_normalizer=controller.value_normalizer,
            task_encoding_len=task_encoding_len,
        )
        hidden = controller.initial_hidden()
        v_hidden = controller.initial_hidden()

    total = cfg.total_inner_steps
    k_outer = cfg.outer_steps
    m_inner = cfg.inner_steps_per_outer

    curve_rows: list[CurveRow] = []
    hyper_records: list[tuple[float, HyperParams]] = []
    restart_events: list[tuple[int, int]] = []
    best_by_outer: list[float | None] = []
    traj_features, traj_vfeatures, traj_actions = [], [], []
    traj_logps, traj_values = [], []

    latest_train_loss = math.nan
    latest_valid_loss = task.valid_loss(live.params)
    best_so_far: float | None = (
        float(latest_valid_loss) if math.isfinite(latest_valid_loss) else None
    )
    prev_params = [p.copy() for p in live.params]
    prev_param_norm = _global_norm(live.params)
    segment_update_norm = 0.0
    prev_action: dict[str, int] | None = None

    for k in range(k_outer):
        progress = k / k_outer
        if is_policy:
            snapshot = RunSnapshot(
                progress=progress,
                train_loss=latest_train_loss,
                valid_loss=latest_valid_loss,
                hypers=live.hypers,
                initial_hypers=initial_hypers,
                prev_action=prev_action,
                checkpoint_summaries=store.slot_summaries(),
                param_norm=_global_norm(live.params),
                prev_param_norm=prev_param_norm,
                segment_update_norm=segment_update_norm,
            )
            pol_vec = pipeline.assemble_policy(
                snapshot, commit=True, update_normalizer=driver.update_normalizers
            )
            probs, hidden = driver.controller.policy_step(pol_vec, hidden)
            if driver.greedy:
                action = driver.controller.greedy_action(probs)
                logp = sum(
                    math.log(max(probs[h.name][action[h.name]], 1e-300))
                    for h in space.heads
                )
            else:
                action, logp = driver.controller.sample_action(probs, action_rng)

            if driver.collect_values:
                extras = (
                    driver.extras_fn(k, best_so_far)
                    if driver.extras_fn is not None
                    else ValueExtras(
                        task_encoding=np.zeros(task_encoding_len),
                        hyper_noise={},
                    )
                )
                val_vec = pipeline.assemble_value(
                    snapshot, extras, pol_vec, commit=driver.update_normalizers
                )
                value, v_hidden = driver.controller.value_step(val_vec, v_hidden)
                traj_vfeatures.append(val_vec)
            else:
                value = 0.0

            for head in space.hyper_heads:
                live.hypers = apply_action(live.hypers, head, action[head.name])
            if space.has_restart:
                choice = action["restart"]
                if choice != 0:
                    restart_events.append((k, choice))
                restart_action(
                    store,
                    live,
                    choice,
                    progress=progress,
                    loss_percentile=pipeline.loss_percentile(latest_valid_loss),
                )
            traj_features.append(pol_vec)
            traj_actions.append(action)
            traj_logps.append(logp)
            traj_values.append(value)
            prev_action = action
        elif is_schedule:
            if driver.apply_restarts:
                for choice in driver.schedule.events_at(k):
                    restart_action(store, live, choice, progress=progress)
            live.hypers = driver.schedule.value_at(progress)

        hyper_records.append((progress, live.hypers.copy()))

        for m in range(m_inner):
            step_index = k * m_inner + m
            train_loss, grads = task.step_batch(live.params, data_rng)
            if math.isfinite(train_loss):
                latest_train_loss = train_loss
            else:
                latest_train_loss = math.nan
            new_params, stats = ciao_step(live.params, grads, live.hypers, live.inner_state)
            live.params = new_params

            sample_now = (step_index + 1) % cfg.stat_every == 0 or step_index == total - 1
            if sample_now:
                if is_policy:
                    small_sq, small_bs = task.noise_probe(live.params, probe_rng)
                    big_sq = float(sum(np.sum(g * g) for g in grads))
                    batch = getattr(task, "batch_size", 1)
                    if batch != small_bs and math.isfinite(small_sq) and math.isfinite(big_sq):
                        stats.noise_scale = estimate_noise_scale(
                            small_sq, big_sq, small_bs, batch
                        )
                    pipeline.observe_step_stats(stats, t=(step_index + 1) / total)
                v = task.valid_loss(live.params)
                latest_valid_loss = v
                if math.isfinite(v) and (best_so_far is None or v < best_so_far):
                    best_so_far = float(v)
                if not curve_rows or (step_index + 1) / total > curve_rows[-1].progress:
                    curve_rows.append(
                        CurveRow(
                            step=step_index + 1,
                            progress=(step_index + 1) / total,
                            train_loss=latest_train_loss,
                            valid_loss=v,
                            hypers=live.hypers.copy(),
                        )
                    )
        best_by_outer.append(best_so_far)
        cur_params = live.params
        segment_update_norm = math.sqrt(
            sum(float(np.sum((a - b) ** 2)) for a, b in zip(cur_params, prev_params))
        ) if len(cur_params) == len(prev_params) and all(
            a.shape == b.shape for a, b in zip(cur_params, prev_params)
        ) else 0.0
        prev_param_norm = _global_norm(prev_params)
        prev_params = [p.copy() for p in cur_params]

    curve = LearningCurve(
        us=np.array([r.progress for r in curve_rows]),
        losses=np.array([r.valid_loss for r in curve_rows]),
    )
    trajectory = None
    if is_policy:
        trajectory = Trajectory(
            policy_features=np.array(traj_features),
            actions=traj_actions,
            logps=np.array(traj_logps),
            values=np.array(traj_values),
            rewards=np.zeros(len(traj_actions)),
            value_features=np.array(traj_vfeatures) if traj_vfeatures else None,
        )
    return EpisodeResult(
        curve=curve,
        curve_rows=curve_rows,
        trajectory=trajectory,
        hyper_records=hyper_records,
        restart_events=restart_events,
        best_by_outer=best_by_outer,
        final_valid_loss=float(curve_rows[-1].valid_loss),
        final_params=live.params,
        initial_params_hash=initial_hash,
        inner_steps_run=total,
    )


# ---------------------------------------------------------------------------
# Schedule export / replay


def export_schedule(result: EpisodeResult, task, policy_hash: str = "") -> ScheduleFile:
    """Freeze an episode's hyperparameter trajectory into a schedule file."""
    records = [
        ScheduleRecord(progress=progress, hypers=hypers.copy())
        for progress, hypers in result.hyper_records
    ]
    return ScheduleFile(
        records=records,
        events=list(result.restart_events),
        policy_hash=policy_hash,
        task_seed=getattr(task, "seed", 0),
        task_family=getattr(task, "family", ""),
    )


def replay_schedule(
    schedule: ScheduleFile,
    task,
    cfg: EpisodeConfig,
    space: ActionSpace | None = None,
    apply_restarts: bool | None = None,
) -> EpisodeResult:
    """Run a task under an exported schedule (no controller involved).

    Restart events are applied only when replaying on the source task;
    replaying on a different task ignores them with a warning attribute.
    """
    if apply_restarts is None:
        apply_restarts = getattr(task, "seed", None) == schedule.task_seed
    driver = ScheduleDriver(schedule=schedule, apply_restarts=apply_restarts)
    space = space or ActionSpace.full()
    hypers0 = schedule.records[0].hypers.copy()
    return run_episode(task, hypers0, driver, cfg, space)


# ---------------------------------------------------------------------------
# Baseline grid evaluation


def run_adamw_baseline(task, spec: BaselineSpec, total_steps: int, wd: float = 1e-2) -> float:
    """Plain AdamW + decay schedule on the identical task instance."""
    params = task.init_params()
    state = InnerState.for_params(params)
    data_rng = np.random.default_rng(np.random.SeedSequence(task.seed).spawn(2)[0])
    hypers = AdamwHypers(learning_rate=spec.learning_rate, weight_decay=wd)
    for step in range(total_steps):
        hypers.learning_rate = schedule_value(
            spec.schedule, spec.learning_rate, step / total_steps
        )
        _, grads = task.step_batch(params, data_rng)
        params = adamw_step(params, grads, hypers, state)
    loss = task.valid_loss(params)
    return float(loss) if math.isfinite(loss) else math.inf


@dataclass
class EvalTaskRow:
    index: int
    family: str
    controller_loss: float
    best_baseline_2x: float
    best_baseline_1x: float
    baseline_losses_2x: dict[str, float]
    baseline_steps_2x: int
    controller_steps: int

    @property
    def speedup_2x(self) -> bool:
        return self.controller_loss <= self.best_baseline_2x

    @property
    def speedup_1x(self) -> bool:
        return self.controller_loss <= self.best_baseline_1x


@dataclass
class EvalReport:
    rows: list[EvalTaskRow]

    def fraction_2x(self, family: str | None = None) -> float:
        rows = [r for r in self.rows if family is None or r.family == family]
        if not rows:
            return 0.0
        return sum(r.speedup_2x for r in rows) / len(rows)

    def fraction_1x(self, family: str | None = None) -> float:
        rows = [r for r in self.rows if family is None or r.family == family]
        if not rows:
            return 0.0
        return sum(r.speedup_1x for r in rows) / len(rows)

    def families(self) -> list[str]:
        return sorted({r.family for r in self.rows})

    def to_dict(self) -> dict:
        return {
            "overall": {"fraction_2x": self.fraction_2x(), "fraction_1x": self.fraction_1x()},
            "per_family": {
                fam: {
                    "fraction_2x": self.fraction_2x(fam),
                    "fraction_1x": self.fraction_1x(fam),
                    "tasks": sum(r.family == fam for r in self.rows),
                }
                for fam in self.families()
            },
            "tasks": [
                {
                    "index": r.index,
                    "family": r.family,
                    "controller_loss": r.controller_loss,
                    "best_baseline_2x": r.best_baseline_2x,
                    "best_baseline_1x": r.best_baseline_1x,
                    "speedup_2x": r.speedup_2x,
                    "speedup_1x": r.speedup_1x,
                }
                for r in self.rows
            ],
        }


def _evaluate_one_task(args):
    (index, task, hypers0, controller, cfg, space, grid, task_encoding_len, episode_seed) = args
    driver = PolicyDriver(controller=controller, update_normalizers=False)
    episode_cfg = EpisodeConfig(
        outer_steps=cfg.outer_steps,
        inner_steps_per_outer=cfg.inner_steps_per_outer,
        stat_every=cfg.stat_every,
        seed=episode_seed,
    )
    result = run_episode(task, hypers0, driver, episode_cfg, space, task_encoding_len)
    controller_loss = result.final_valid_loss
    if not math.isfinite(controller_loss):
        controller_loss = math.inf
    budget = episode_cfg.total_inner_steps
    losses_2x = {spec.label(): run_adamw_baseline(task, spec, 2 * budget) for spec in grid}
    losses_1x = {spec.label(): run_adamw_baseline(task, spec, budget) for spec in grid}
    return EvalTaskRow(
        index=index,
        family=getattr(task, "family", "unknown"),
        controller_loss=controller_loss,
        best_baseline_2x=min(losses_2x.values()),
        best_baseline_1x=min(losses_1x.values()),
        baseline_losses_2x=losses_2x,
        baseline_steps_2x=2 * budget,
        controller_steps=result.inner_steps_run,
    )


def evaluate_speedup_fraction(
    controller: LstmController,
    tasks: list,
    cfg: EpisodeConfig,
    grid: list[BaselineSpec] | None = None,
    noise_names: list[str] | None = None,
    task_encoding_len: int = 0,
    seed: int = 0,
    workers: int | None = None,
) -> EvalReport:
    """Fraction of tasks where the controller beats every doubled-budget baseline.

    Every baseline runs on the identical task instance (same seed, same
    initial parameters, same data order) with twice the controller's inner
    step budget; the equal-budget variant is reported alongside.
    """
    if grid is None:
        grid = baseline_grid()
    space = controller.space
    rng = np.random.default_rng(seed)
    if noise_names is None:
        noise_names = [h.name for h in space.hyper_heads]
    jobs = []
    for index, task in enumerate(tasks):
        noise = sample_initial_noise(rng, noise_names)
        hypers0 = apply_initial_noise(HyperParams(), noise)
        episode_seed = int(rng.integers(2**31 - 1))
        jobs.append(
            (index, task, hypers0, controller, cfg, space, grid, task_encoding_len, episode_seed)
        )
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV_VAR, "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_evaluate_one_task, jobs))
    else:
        rows = [_evaluate_one_task(job) for job in jobs]
    rows.sort(key=lambda r: r.index)
    return EvalReport(rows=rows)


# ---------------------------------------------------------------------------
# Outer training loop


@dataclass
class OuterTrainingConfig:
    iterations: int = 200
    tasks_per_iteration: int = 4
    rollouts_per_task: int = 4  # policy rollouts amortizing one baseline run
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    distribution: TaskDistributionConfig = field(default_factory=TaskDistributionConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    head_names: list[str] | None = None  # None -> full action space
    include_restart: bool = True
    hidden: int = 64
    seed: int = 0
    ema_beta: float = 0.99
    reward_floor: float = -1.0
    reward_ceiling: float = 10.0
    eval_every: int = 0  # 0 disables held-out evaluation
    eval_task_count: int = 8


@dataclass
class TrainingLog:
    iteration_rewards: list[float] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    eval_rounds: list[dict] = field(default_factory=list)
    baseline_episodes: int = 0
    policy_episodes: int = 0
    pairing_checks: int = 0
    pairing_failures: int = 0


def build_controller(cfg: OuterTrainingConfig) -> tuple[LstmController, ActionSpace, int]:
    if cfg.head_names is None:
        space = ActionSpace.full()
    else:
        space = ActionSpace.reduced(cfg.head_names, include_restart=cfg.include_restart)
    enc_len = encoding_length(cfg.distribution)
    pol_len = policy_layout(space).length
    extras_len = value_extras_layout(space, enc_len).length
    controller = LstmController(
        space,
        policy_input_len=pol_len,
        value_input_len=pol_len + extras_len,
        hidden=cfg.hidden,
        seed=cfg.seed,
        feature_layout_hash=policy_layout(space).layout_hash(),
    )
    controller.value_normalizer = VectorNormalizer(extras_len)
    return controller, space, enc_len


def _curve_stats(curve: LearningCurve):
    finite = curve.losses[np.isfinite(curve.losses)]
    if not len(finite):
        return 0.0, 0.0, 0.0
    return float(finite.min()), float(finite.max()), float(curve.losses[-1])


def envelope_curve(curve: LearningCurve) -> LearningCurve | None:
    """Running-minimum envelope of the finite curve points.

    Rewards score the best validation loss seen so far, so the baseline fit
    must anchor to the same quantity; fitting the raw noisy samples instead
    would hand out spurious reward for noise dips below the fit.  None when
    fewer than 3 finite points survive (hopeless divergence).
    """
    mask = np.isfinite(curve.losses)
    if mask.sum() < 3:
        return None
    return LearningCurve(
        us=curve.us[mask], losses=np.minimum.accumulate(curve.losses[mask])
    )


def evaluate_against_static(
    controller: LstmController,
    task,
    hypers0: HyperParams,
    static_fit: PowerLawFit,
    static_curve: LearningCurve,
    cfg: EpisodeConfig,
    space: ActionSpace,
    task_encoding_len: int,
    seed: int,
) -> float:
    """Episode reward measured against a fixed no-action baseline fit."""
    driver = PolicyDriver(controller=controller, update_normalizers=False)
    episode_cfg = EpisodeConfig(
        outer_steps=cfg.outer_steps,
        inner_steps_per_outer=cfg.inner_steps_per_outer,
        stat_every=cfg.stat_every,
        seed=seed,
    )
    result = run_episode(task, hypers0, driver, episode_cfg, space, task_encoding_len)
    best = result.best_by_outer[-1]
    if best is None:
        return -1.0
    return reward_from_loss(static_fit, static_curve, best)


def train_outer(cfg: OuterTrainingConfig):
    """The outer loop: sample tasks, pair a self-play baseline with 4 policy
    rollouts, shape rewards against the baseline's power-law fit, update
    with PPO, and advance the EMA baseline."""
    controller, space, enc_len = build_controller(cfg)
    baseline_controller = copy.deepcopy(controller)
    optimizer = ControllerOptimizer(controller, cfg.ppo.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    log = TrainingLog()
    noise_names = [h.name for h in space.hyper_heads]

    eval_setup = []
    if cfg.eval_every:
        eval_rng = np.random.default_rng(cfg.seed + 7919)
        for _ in range(cfg.eval_task_count):
            task, _ = sample_task(eval_rng, cfg.distribution)
            noise = sample_initial_noise(eval_rng, noise_names)
            hypers0 = apply_initial_noise(HyperParams(), noise)
            static = run_episode(task, hypers0, StaticDriver(), cfg.episode, space)
            curve = envelope_curve(static.curve)
            if curve is None:
                continue
            eval_setup.append((task, hypers0, fit_power_law(curve), curve))

    for iteration in range(cfg.iterations):
        batch: list[Trajectory] = []
        iteration_rewards = []
        for _ in range(cfg.tasks_per_iteration):
            task, encoding = sample_task(rng, cfg.distribution)
            noise = sample_initial_noise(rng, noise_names)
            hypers0 = apply_initial_noise(HyperParams(), noise)

            baseline_seed = int(rng.integers(2**31 - 1))
            baseline_driver = PolicyDriver(controller=baseline_controller)
            baseline_cfg = EpisodeConfig(
                outer_steps=cfg.episode.outer_steps,
                inner_steps_per_outer=cfg.episode.inner_steps_per_outer,
                stat_every=cfg.episode.stat_every,
                seed=baseline_seed,
            )
            baseline = run_episode(task, hypers0, baseline_driver, baseline_cfg, space, enc_len)
            log.baseline_episodes += 1
            curve = envelope_curve(baseline.curve)
            if curve is None:
                continue  # hopeless divergence; skip the whole task
            fit = fit_power_law(curve)
            b_min, b_max, b_final = _curve_stats(curve)

            def extras_fn(_k, best_so_far, _enc=encoding, _noise=noise, _fit=fit, _curve=curve):
                reward_so_far = (
                    reward_from_loss(
                        _fit, _curve, best_so_far,
                        floor=cfg.reward_floor, ceiling=cfg.reward_ceiling,
                    )
                    if best_so_far is not None
                    else 0.0
                )
                return ValueExtras(
                    task_encoding=_enc.vector,
                    hyper_noise=_noise,
                    reward_so_far=reward_so_far,
                    baseline_min=b_min,
                    baseline_max=b_max,
                    baseline_final=b_final,
                    fit_a=_fit.a,
                    fit_b=_fit.b,
                    fit_c=_fit.c,
                )

            for _ in range(cfg.rollouts_per_task):
                rollout_seed = int(rng.integers(2**31 - 1))
                driver = PolicyDriver(
                    controller=controller,
                    collect_values=True,
                    extras_fn=extras_fn,
                )
                rollout_cfg = EpisodeConfig(
                    outer_steps=cfg.episode.outer_steps,
                    inner_steps_per_outer=cfg.episode.inner_steps_per_outer,
                    stat_every=cfg.episode.stat_every,
                    seed=rollout_seed,
                )
                result = run_episode(task, hypers0, driver, rollout_cfg, space, enc_len)
                log.policy_episodes += 1
                log.pairing_checks += 1
                if result.initial_params_hash != baseline.initial_params_hash:
                    log.pairing_failures += 1
                result.trajectory.rewards = shaped_rewards(
                    result.best_by_outer, fit, curve,
                    floor=cfg.reward_floor, ceiling=cfg.reward_ceiling,
                )
                batch.append(result.trajectory)
                iteration_rewards.append(result.trajectory.episode_return)

        if not batch:
            log.iteration_rewards.append(math.nan)
            log.diagnostics.append({"skipped": True})
            continue
        diagnostics = ppo_update(controller, batch, cfg.ppo, optimizer)
        baseline_controller.weights = ema_baseline_sync(
            controller.weights, baseline_controller.weights, cfg.ema_beta
        )
        log.iteration_rewards.append(float(np.mean(iteration_rewards)))
        log.diagnostics.append(diagnostics[-1])

        if cfg.eval_every and (iteration + 1) % cfg.eval_every == 0 and eval_setup:
            round_rewards = []
            for t_index, (task, hypers0, fit, curve) in enumerate(eval_setup):
                r = evaluate_against_static(
                    controller, task, hypers0, fit, curve, cfg.episode, space, enc_len,
                    seed=1_000_003 * (iteration + 1) + t_index,
                )
                round_rewards.append(r)
            log.eval_rounds.append(
                {"iteration": iteration + 1, "rewards": round_rewards}
            )

    return controller, log
