"""Schema-based world model, planner and grid-Breakout harness."""

from .agent import EpisodeRecord, RunConfig, run_episode, run_eval, run_training
from .breakout import BreakoutConfig, BreakoutEnv, ObjectType, Observation, render_ascii
from .core import (
    ALL_ACTIONS,
    ConfigurationError,
    ContractError,
    EnvSpec,
    FrameStack,
    ParameterSet,
    apply_schema_matrix,
    build_augmented,
    next_state,
    reward_fires,
    schema_fires,
    state_from_types,
)
from .forward import FactorGraph, held_out_accuracy, predict_step, simulate_actions, unroll
from .learner import (
    AttributeDataset,
    ReplayBuffer,
    RewardDataset,
    Transition,
    brute_force_oracle,
    learn_epoch,
    learn_reward_schema,
    learn_schema,
    prune_false_positives,
)
from .planner import Plan, plan, select_targets
from .storage import load_config, load_params, save_params

__version__ = "0.1.0"
