"""Simulator-pretrained tabular Q-learning control for a four-segment pneumatic arm."""

from .config import ConfigError, RunConfig, default_eval_goals, load_config
from .episode import (
    EpisodeLog,
    NominalPlant,
    PerturbedPlant,
    PerturbedPlantConfig,
    RewardSpec,
    StepRecord,
    compute_reward,
    make_perturbed_plant,
    pose_errors,
    run_episode,
)
from .evalrun import EvalReport, GoalResult, evaluate, sample_goals, write_report_csvs
from .kinematics import (
    ArmParams,
    PressureRangeError,
    SegmentConfig,
    actuation_to_config,
    arm_forward_kinematics,
    pose_position,
    pose_to_direction,
    segment_transform,
    tip_batch,
    validate_pressures,
)
from .pretrain import (
    GoalBank,
    GoalBankError,
    MergeConflictError,
    PretrainSummary,
    ShardPlan,
    build_goal_bank,
    load_goal_bank,
    merge,
    plan_shards,
    pretrain,
    pretrain_shard,
    save_goal_bank,
)
from .qtable import (
    ActionSpec,
    BadMagicError,
    ChecksumError,
    HyperParams,
    QTable,
    QTableIOError,
    TruncatedTableError,
    UnsupportedVersionError,
    augment,
    load,
    q_update,
    save,
    select_action,
)
from .state import (
    BinningSpec,
    ContinuousState,
    DiscreteState,
    GoalPose,
    StateEncoder,
    continuous_state,
    encode,
    encode_goal_prefix,
    goal_bin,
    rest_tip_origin,
    spherical_of,
)

__all__ = [
    "ArmParams",
    "PressureRangeError",
    "SegmentConfig",
    "actuation_to_config",
    "arm_forward_kinematics",
    "pose_position",
    "pose_to_direction",
    "segment_transform",
    "tip_batch",
    "validate_pressures",
    "BinningSpec",
    "ContinuousState",
    "DiscreteState",
    "GoalPose",
    "StateEncoder",
    "continuous_state",
    "encode",
    "encode_goal_prefix",
    "goal_bin",
    "rest_tip_origin",
    "spherical_of",
    "ActionSpec",
    "BadMagicError",
    "ChecksumError",
    "HyperParams",
    "QTable",
    "QTableIOError",
    "TruncatedTableError",
    "UnsupportedVersionError",
    "augment",
    "load",
    "q_update",
    "save",
    "select_action",
    "EpisodeLog",
    "NominalPlant",
    "PerturbedPlant",
    "PerturbedPlantConfig",
    "RewardSpec",
    "StepRecord",
    "compute_reward",
    "make_perturbed_plant",
    "pose_errors",
    "run_episode",
    "GoalBank",
    "GoalBankError",
    "MergeConflictError",
    "PretrainSummary",
    "ShardPlan",
    "build_goal_bank",
    "load_goal_bank",
    "merge",
    "plan_shards",
    "pretrain",
    "pretrain_shard",
    "save_goal_bank",
    "ConfigError",
    "RunConfig",
    "default_eval_goals",
    "load_config",
    "EvalReport",
    "GoalResult",
    "evaluate",
    "sample_goals",
    "write_report_csvs",
]

__version__ = "0.1.0"
