"""Desk-scale laboratory for RL-trained hyperparameter controllers.

A small LSTM policy updates the hyperparameters of a configurable inner
adaptive optimizer a few times per training run.  The package provides the
inner optimizer, the unitless feature pipeline, the relative action space,
the power-law reward, inner task families, the PPO training harness, and a
replayable schedule-file format.
"""

from .actions import ActionHead, ActionSpace, CheckpointStore, HYPER_BOUNDS
from .features import FeaturePipeline, IntegralCdfState, RunSnapshot, VectorNormalizer
from .harness import (
    EpisodeConfig,
    EvalReport,
    OuterTrainingConfig,
    PolicyDriver,
    ScheduleDriver,
    StaticDriver,
    build_controller,
    evaluate_speedup_fraction,
    export_schedule,
    replay_schedule,
    run_episode,
    train_outer,
)
from .inner_opt import (
    AdamwHypers,
    BaselineSpec,
    HyperParams,
    InnerState,
    StepStats,
    TensorSlotState,
    adamw_step,
    baseline_grid,
    ciao_step,
    clip_gradient,
    schedule_value,
)
from .policy import LstmController, PpoConfig, Trajectory, ppo_update
from .reward import LearningCurve, PowerLawFit, fit_power_law, reward_from_loss, shaped_rewards
from .schedule_file import ScheduleFile
from .tasks import (
    Dataset,
    MlpTask,
    NqmTask,
    TaskDistributionConfig,
    load_idx_dataset,
    make_synthetic_dataset,
    sample_task,
)

__version__ = "0.1.0"

__all__ = [
    "ActionHead",
    "ActionSpace",
    "AdamwHypers",
    "BaselineSpec",
    "CheckpointStore",
    "Dataset",
    "EpisodeConfig",
    "EvalReport",
    "FeaturePipeline",
    "HYPER_BOUNDS",
    "HyperParams",
    "InnerState",
    "IntegralCdfState",
    "LearningCurve",
    "LstmController",
    "MlpTask",
    "NqmTask",
    "OuterTrainingConfig",
    "PolicyDriver",
    "PowerLawFit",
    "PpoConfig",
    "RunSnapshot",
    "ScheduleDriver",
    "ScheduleFile",
    "StaticDriver",
    "StepStats",
    "TaskDistributionConfig",
    "TensorSlotState",
    "Trajectory",
    "VectorNormalizer",
    "adamw_step",
    "baseline_grid",
    "build_controller",
    "ciao_step",
    "clip_gradient",
    "evaluate_speedup_fraction",
    "export_schedule",
    "fit_power_law",
    "load_idx_dataset",
    "make_synthetic_dataset",
    "ppo_update",
    "replay_schedule",
    "reward_from_loss",
    "run_episode",
    "sample_task",
    "schedule_value",
    "shaped_rewards",
    "train_outer",
]
