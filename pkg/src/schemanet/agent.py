"""Training and evaluation harness around the environment, learner and planner.

Training interleaves acting and learning: the agent follows its current
plan step by step, falls back to seeded-uniform exploration when no plan
exists, stores unique transitions, and runs one learning pass between
episodes.  A plan is dropped as soon as the observed next state diverges
from the model's single-action prediction, after a respawn frame jump, or
when its actions run out.  Evaluation reuses the same episode loop with
learning and exploration noise disabled.

Action selection commits to the farthest plannable reward target rather
than the nearest one: every future reward needs a live ball, so the
longest commitment also keeps the paddle working, where a nearest-target
plan would idle through its unconstrained layers and let the ball's
return descent drift out of reach.  When no reward target verifies, the
harness backtraces the farthest reachable ball-attribute node instead (a
survival plan through the same graph machinery) before resorting to
random moves.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

import numpy as np

from .breakout import BreakoutConfig, BreakoutEnv, ObjectType
from .core import FrameStack, ParameterSet, state_from_types
from .forward import FactorGraph, predict_step, unroll
from .learner import ReplayBuffer, Transition, learn_epoch
from .planner import Plan, plan_for_targets, select_targets


@dataclass(frozen=True)
class RunConfig:
    env: BreakoutConfig = field(default_factory=BreakoutConfig)
    window_side: int = 7
    horizon: int = 24
    schema_cap: int = 500
    episodes: int = 25
    seeds: tuple[int, ...] = (0,)
    explore_epsilon: float = 0.1
    replan: str = "divergence"          # "divergence" | "every_step"
    target_order: str = "farthest"      # "farthest" | "nearest"
    survival_fallback: bool = True      # plan for ball survival when no reward is plannable
    plan_commit: int = 16               # execute at most this many actions before replanning
    plan_retry_interval: int = 1        # steps between attempts after a failed plan
    max_plan_depth: int = 100
    params_path: str = "params.txt"
    metrics_path: str = "metrics.csv"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.replan not in ("divergence", "every_step"):
            raise ValueError(f"unknown replan policy {self.replan!r}")
        if self.target_order not in ("farthest", "nearest"):
            raise ValueError(f"unknown target order {self.target_order!r}")

    def env_spec(self):
        return self.env.env_spec(self.window_side)


@dataclass
class EpisodeRecord:
    episode: int
    seed: int
    total_reward: int
    steps: int
    bricks: int
    lives_lost: int
    plans_ok: int
    plans_tried: int
    schema_counts: dict[str, int] = field(default_factory=dict)


def _survival_targets(graph: FactorGraph, limit: int = 8) -> list:
    """Ball-attribute nodes, farthest layer first: reaching one keeps the
    ball alive to that layer."""
    keys = [
        key
        for key in graph.nodes
        if key[0] == "attr" and key[1] >= 1 and key[3] == int(ObjectType.BALL)
    ]
    keys.sort(key=lambda k: (-k[1], k[2]))
    return keys[:limit]


def _rollout_confirms(
    frames: FrameStack, params: ParameterSet, found: Plan, margin: int = 4
) -> bool:
    """Re-simulate the plan's actions one at a time and require the target.

    The superimposed graph is optimistic: self-transitions assume noop, so
    a backtraced plan can rely on an attribute its own actions destroy.
    Rolling the concrete action sequence through the model is the ground
    truth the plan must survive.  Reward targets must fire their sign at
    the target layer; attribute targets count as reached when the
    attribute is alive anywhere at that layer (a survival plan cares that
    the ball exists, not which exact cell the optimistic graph predicted).

    After the target, the rollout continues under noop for ``margin``
    steps and the ball must still be present: a plan that earns its
    reward while steering the ball into an imminent unsaved drop is
    rejected in favor of the next candidate.
    """
    kind, layer = found.target[0], found.target[1]
    ball = int(ObjectType.BALL)
    prev, curr = frames.prev, frames.curr
    hit = False
    actions = list(found.actions) + [params.spec.noop_action] * margin
    for i, action in enumerate(actions):
        pred = predict_step(FrameStack(prev, curr), params, action=action)
        if i + 1 == layer:
            if kind == "reward":
                if not pred.fired_reward[found.target[2]]:
                    return False
            elif not pred.next[:, found.target[3]].any():
                return False
            hit = True
        if hit and not pred.next[:, ball].any():
            return False
        prev, curr = curr, pred.next
    return hit


def _make_plan(
    graph: FactorGraph, frames: FrameStack, params: ParameterSet, config: RunConfig,
    attempts: int = 8,
) -> Plan | None:
    targets = select_targets(graph)
    if config.target_order == "farthest":
        targets = list(reversed(targets))
    if config.survival_fallback:
        targets = targets + _survival_targets(graph)
    for target in targets[:attempts]:
        found = plan_for_targets(graph, [target], max_depth=config.max_plan_depth)
        if found is not None and _rollout_confirms(frames, params, found):
            return found
    return None


def run_episode(
    env: BreakoutEnv,
    params: ParameterSet | None,
    config: RunConfig,
    *,
    seed: int,
    rng: random.Random,
    buffer: ReplayBuffer | None = None,
    force_explore: bool = False,
    watch=None,
) -> EpisodeRecord:
    """Play one episode; learning happens outside, between episodes."""
    spec = config.env_spec()
    obs = env.reset(seed)
    prev = state_from_types(obs.prev_map, spec)
    curr = state_from_types(obs.type_map, spec)
    lives_start = obs.lives
    bricks_start = obs.bricks_left
    queue: list[int] = []
    plans_tried = plans_ok = 0
    total_reward = 0
    next_plan_step = 0
    # Until a positive reward schema exists, no reward node can ever appear.
    may_plan = (
        params is not None and len(params.reward_pos) > 0 and not force_explore
    )
    training = buffer is not None

    while not obs.done:
        if may_plan and not queue and obs.step >= next_plan_step:
            frames = FrameStack(prev, curr)
            graph = unroll(frames, params, config.horizon)
            plans_tried += 1
            found = _make_plan(graph, frames, params, config)
            if found is not None:
                plans_ok += 1
                # Committing only a prefix keeps lookahead from running dry
                # right when a long survival plan ends.
                queue = list(found.actions[: config.plan_commit])
            else:
                next_plan_step = obs.step + config.plan_retry_interval

        planned = bool(queue)
        action = queue.pop(0) if queue else rng.randrange(spec.num_actions)
        if training and config.explore_epsilon > 0 and rng.random() < config.explore_epsilon:
            action = rng.randrange(spec.num_actions)
            queue.clear()
            planned = False

        expected = None
        if planned and config.replan == "divergence":
            expected = predict_step(FrameStack(prev, curr), params, action=action).next

        obs = env.step(action)
        if watch is not None:
            watch(obs, action)
        nxt = state_from_types(obs.type_map, spec)
        total_reward += obs.reward
        if buffer is not None:
            invalid = ()
            if obs.respawn_cell is not None:
                r, c = obs.respawn_cell
                invalid = (r * spec.grid_width + c,)
            buffer.insert(
                Transition(prev, curr, action, nxt, obs.reward, invalid_entities=invalid)
            )
        if obs.respawned or obs.reward != 0 or config.replan == "every_step":
            # A reward event means the plan's purpose is spent (or a life was
            # lost); replanning refreshes the lookahead either way.
            queue.clear()
        elif expected is not None and not np.array_equal(expected, nxt):
            queue.clear()
        if obs.prev_map is not None:
            prev = state_from_types(obs.prev_map, spec)
            curr = nxt
        else:
            prev, curr = curr, nxt

    return EpisodeRecord(
        episode=0,
        seed=seed,
        total_reward=total_reward,
        steps=obs.step,
        bricks=bricks_start - obs.bricks_left,
        lives_lost=lives_start - obs.lives,
        plans_ok=plans_ok,
        plans_tried=plans_tried,
    )


def run_training(config: RunConfig):
    """Alternate episodes and learning passes; returns (records, params, buffer).

    The first episode is forced exploratory to seed the buffer.  Episodes
    cycle through the configured seeds.
    """
    spec = config.env_spec()
    params = ParameterSet.empty(spec, cap=config.schema_cap)
    buffer = ReplayBuffer(spec)
    env = BreakoutEnv(config.env)
    records: list[EpisodeRecord] = []
    for ep in range(config.episodes):
        seed = config.seeds[ep % len(config.seeds)]
        rng = random.Random(seed * 100003 + ep)
        record = run_episode(
            env,
            params,
            config,
            seed=seed,
            rng=rng,
            buffer=buffer,
            force_explore=(ep == 0),
        )
        learn_epoch(buffer, params)
        record.episode = ep
        record.schema_counts = params.schema_counts()
        records.append(record)
    return records, params, buffer


def run_eval(config: RunConfig, params: ParameterSet, variant: str = "standard"):
    """Evaluate fixed parameters; no learning, no exploration noise."""
    if variant not in ("standard", "two_ball"):
        raise ValueError(f"unknown variant {variant!r}")
    env_cfg = config.env if variant == "standard" else replace(config.env, num_balls=2)
    env = BreakoutEnv(env_cfg)
    records: list[EpisodeRecord] = []
    for seed in config.seeds:
        for ep in range(config.episodes):
            rng = random.Random(seed * 900001 + ep)
            record = run_episode(env, params, config, seed=seed, rng=rng)
            record.episode = ep
            record.schema_counts = params.schema_counts()
            records.append(record)
    return records


def mean_total_reward(records: list[EpisodeRecord]) -> float:
    if not records:
        return 0.0
    return float(np.mean([r.total_reward for r in records]))
