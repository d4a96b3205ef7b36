"""Command line interface: train, eval, transfer, play, dump-graph."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .agent import RunConfig, mean_total_reward, run_eval, run_training
from .breakout import BreakoutEnv, render_ascii
from .core import FrameStack, state_from_types
from .forward import graph_to_text, unroll
from .storage import emit_metrics, load_config, load_params, save_params


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file (key = value lines)")
    p.add_argument("--seed", type=int, help="override seeds with this single seed")
    p.add_argument("--episodes", type=int, help="override episode count")
    p.add_argument("--horizon", type=int, help="override planning horizon")


def _load(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    return dataclasses.replace(config, **overrides) if overrides else config


def _cmd_train(args) -> int:
    config = _load(args)
    records, params, _ = run_training(config)
    params_path = args.out or config.params_path
    save_params(params, params_path)
    emit_metrics(records, config.metrics_path)
    print(f"trained {len(records)} episodes; params -> {params_path}; "
          f"metrics -> {config.metrics_path}")
    print(f"mean total reward {mean_total_reward(records):.2f}")
    return 0


def _cmd_eval(args, variant: str) -> int:
    config = _load(args)
    if config.episodes == 25 and args.episodes is None:
        config = dataclasses.replace(config, episodes=1)
    if len(config.seeds) == 1 and args.seed is None and not args.config:
        config = dataclasses.replace(config, seeds=(0, 1, 2, 3, 4))
    params = load_params(args.params, config.env_spec(), cap=config.schema_cap)
    records = run_eval(config, params, variant=variant)
    out = args.out or config.metrics_path
    emit_metrics(records, out)
    print(f"{variant} eval over seeds {config.seeds}: "
          f"mean total reward {mean_total_reward(records):.2f}; metrics -> {out}")
    return 0


def _cmd_play(args) -> int:
    import random

    from .agent import run_episode

    config = _load(args)
    params = (
        load_params(args.params, config.env_spec(), cap=config.schema_cap)
        if args.params
        else None
    )
    env = BreakoutEnv(config.env)
    seed = config.seeds[0]
    watch = None
    if args.render:
        def watch(obs, action):
            print(f"step {obs.step} action {action} reward {obs.reward} "
                  f"lives {obs.lives}")
            print(render_ascii(obs.type_map))
    rng = random.Random(seed * 100003)
    record = run_episode(env, params, config, seed=seed, rng=rng, watch=watch)
    print(f"seed {seed}: reward {record.total_reward} in {record.steps} steps, "
          f"{record.bricks} bricks, {record.lives_lost} lives lost")
    return 0


def _cmd_dump_graph(args) -> int:
    config = _load(args)
    params = load_params(args.params, config.env_spec(), cap=config.schema_cap)
    env = BreakoutEnv(config.env)
    obs = env.reset(config.seeds[0])
    spec = config.env_spec()
    frames = FrameStack(
        state_from_types(obs.prev_map, spec), state_from_types(obs.type_map, spec)
    )
    graph = unroll(frames, params, config.horizon)
    text = graph_to_text(graph)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"graph -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="schemanet")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train schemas on grid Breakout")
    _add_common(p)
    p.add_argument("--out", help="where to write the learned parameters")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate saved parameters")
    _add_common(p)
    p.add_argument("--params", required=True)
    p.add_argument("--out", help="metrics CSV path")
    p.set_defaults(func=lambda a: _cmd_eval(a, "standard"))

    p = sub.add_parser("transfer", help="zero-shot two-ball evaluation")
    _add_common(p)
    p.add_argument("--params", required=True)
    p.add_argument("--out", help="metrics CSV path")
    p.set_defaults(func=lambda a: _cmd_eval(a, "two_ball"))

    p = sub.add_parser("play", help="play one episode")
    _add_common(p)
    p.add_argument("--params")
    p.add_argument("--render", action="store_true", help="print the final board")
    p.set_defaults(func=_cmd_play)

    p = sub.add_parser("dump-graph", help="unroll the initial state and dump the graph")
    _add_common(p)
    p.add_argument("--params", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_dump_graph)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
