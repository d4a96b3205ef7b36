"""Deterministic grid Breakout emitting typed-pixel observations.

The playfield is bounded by walls of thickness one on the left, right and
top.  The paddle slides along the bottom row, the ball moves one cell
diagonally per step, and three rows of bricks sit near the top.  Every
rule below is a function of the two most recent frames' 7x7 neighborhoods
plus the action (7 because the wall that clamps a paddle move is three
cells from the paddle's far edge), which is the property the schema
learner relies on.  The one exception is the ball respawn after a lost
life, which teleports the ball to the paddle; such steps are flagged on
the observation so consumers can treat the frame boundary specially.

Rewards: +1 per brick knocked down, -1 per ball dropped past the paddle,
0 otherwise; simultaneous events sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .core import ConfigurationError, ContractError, EnvSpec

NOOP, LEFT, RIGHT = 0, 1, 2


class ObjectType(IntEnum):
    # Rendering precedence when objects overlap: ball > paddle > brick > wall > void.
    VOID = 0
    WALL = 1
    BRICK = 2
    PADDLE = 3
    BALL = 4


ASCII_CHARS = {
    ObjectType.VOID: ".",
    ObjectType.WALL: "#",
    ObjectType.BRICK: "B",
    ObjectType.PADDLE: "=",
    ObjectType.BALL: "o",
}


@dataclass(frozen=True)
class BreakoutConfig:
    grid_width: int = 15
    grid_height: int = 12
    brick_row_lo: int = 2
    brick_row_hi: int = 4          # inclusive
    brick_col_lo: int = 1
    brick_col_hi: int = 12         # inclusive
    paddle_width: int = 3
    lives_per_episode: int = 3
    max_steps: int = 5000
    num_balls: int = 1

    def __post_init__(self):
        if self.num_balls not in (1, 2):
            raise ConfigurationError("num_balls must be 1 or 2")
        if self.grid_width < 7 or self.grid_height < 7:
            raise ConfigurationError("grid too small for walls, bricks and paddle")
        if not (1 <= self.brick_row_lo <= self.brick_row_hi < self.grid_height - 2):
            raise ConfigurationError("brick rows must sit between top wall and paddle")
        if not (1 <= self.brick_col_lo <= self.brick_col_hi <= self.grid_width - 2):
            raise ConfigurationError("brick columns must sit between the side walls")
        if not (1 <= self.paddle_width <= self.grid_width - 2):
            raise ConfigurationError("paddle does not fit between the walls")

    @property
    def num_bricks(self) -> int:
        return (self.brick_row_hi - self.brick_row_lo + 1) * (
            self.brick_col_hi - self.brick_col_lo + 1
        )

    @property
    def paddle_min_col(self) -> int:
        return 1

    @property
    def paddle_max_col(self) -> int:
        return self.grid_width - 1 - self.paddle_width

    def env_spec(self, window_side: int = 7) -> EnvSpec:
        return EnvSpec(
            grid_width=self.grid_width,
            grid_height=self.grid_height,
            num_types=len(ObjectType),
            num_actions=3,
            window_side=window_side,
            noop_action=NOOP,
        )


@dataclass
class Ball:
    row: int
    col: int
    vel_row: int   # -1 up, +1 down
    vel_col: int   # -1 left, +1 right


@dataclass
class BreakoutState:
    paddle_col: int                 # leftmost paddle cell
    balls: list[Ball]
    brick_alive: np.ndarray         # (brick rows, brick cols) bool
    lives: int
    step: int
    serve_dir: int                  # horizontal direction of served balls


@dataclass(frozen=True)
class Observation:
    type_map: np.ndarray            # (H, W) int8 of ObjectType values
    reward: int
    done: bool
    lives: int
    bricks_left: int
    step: int
    # Set on reset and after a respawn: a physics-consistent previous frame
    # the consumer should adopt as the older half of its frame stack.
    prev_map: np.ndarray | None = None
    respawned: bool = False
    # Where the respawned ball teleported to; that cell's contents are not
    # explained by the local dynamics.
    respawn_cell: tuple[int, int] | None = None


class BreakoutEnv:
    """Single-episode simulator; reset() starts a fresh episode."""

    def __init__(self, config: BreakoutConfig | None = None):
        self.config = config or BreakoutConfig()
        self._state: BreakoutState | None = None
        self._done = True

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int = 0) -> Observation:
        """Start an episode.  The seed only selects the deterministic initial
        paddle column and serve direction; the dynamics have no randomness."""
        cfg = self.config
        paddle = cfg.paddle_min_col + (seed // 2) % (cfg.paddle_max_col - cfg.paddle_min_col + 1)
        serve = 1 if seed % 2 == 0 else -1
        bricks = np.ones(
            (cfg.brick_row_hi - cfg.brick_row_lo + 1, cfg.brick_col_hi - cfg.brick_col_lo + 1),
            dtype=bool,
        )
        # Build the predecessor of the serve frame (balls one step behind),
        # then advance it with a noop so the two frames are consistent under
        # the ordinary physics.
        center = paddle + cfg.paddle_width // 2
        balls = [Ball(cfg.grid_height - 1, center - serve, -1, serve)]
        if cfg.num_balls == 2:
            balls.append(Ball(cfg.grid_height - 3, center + serve, -1, -serve))
        state = BreakoutState(
            paddle_col=paddle,
            balls=balls,
            brick_alive=bricks,
            lives=cfg.lives_per_episode,
            step=0,
            serve_dir=serve,
        )
        prev_map = self._render(state)
        reward, respawned = self._advance(state, NOOP)
        if reward != 0 or respawned:
            raise ConfigurationError("initial placement collided during serve")
        self._state = state
        self._done = False
        return Observation(
            type_map=self._render(state),
            reward=0,
            done=False,
            lives=state.lives,
            bricks_left=int(state.brick_alive.sum()),
            step=state.step,
            prev_map=prev_map,
            respawned=False,
        )

    def step(self, action: int) -> Observation:
        if self._done or self._state is None:
            raise ContractError("step() called on a finished episode")
        if action not in (NOOP, LEFT, RIGHT):
            raise ContractError(f"unknown action {action}")
        state = self._state
        reward, respawned = self._advance(state, action)
        state.step += 1
        bricks_left = int(state.brick_alive.sum())
        done = state.lives <= 0 or bricks_left == 0 or state.step >= self.config.max_steps
        self._done = done
        prev_map = self._respawn_prev_map(state) if respawned else None
        respawn_cell = (state.balls[0].row, state.balls[0].col) if respawned else None
        return Observation(
            type_map=self._render(state),
            reward=reward,
            done=done,
            lives=state.lives,
            bricks_left=bricks_left,
            step=state.step,
            prev_map=prev_map,
            respawned=respawned,
            respawn_cell=respawn_cell,
        )

    @property
    def state(self) -> BreakoutState:
        if self._state is None:
            raise ContractError("environment has not been reset")
        return self._state

    # -- dynamics -----------------------------------------------------------

    def _advance(self, state: BreakoutState, action: int) -> tuple[int, bool]:
        cfg = self.config
        h, w = cfg.grid_height, cfg.grid_width
        reward = 0

        if action == LEFT:
            state.paddle_col = max(cfg.paddle_min_col, state.paddle_col - 1)
        elif action == RIGHT:
            state.paddle_col = min(cfg.paddle_max_col, state.paddle_col + 1)

        survivors: list[Ball] = []
        lost = 0
        for ball in state.balls:
            vr, vc = ball.vel_row, ball.vel_col
            # Walls reflect before the move, so a ball never enters a wall cell.
            if ball.col + vc in (0, w - 1):
                vc = -vc
            if ball.row + vr == 0:
                vr = -vr
            nr, nc = ball.row + vr, ball.col + vc
            if nr == h - 1:
                if state.paddle_col <= nc < state.paddle_col + cfg.paddle_width:
                    # Lands on the paddle; the vertical velocity flips for the
                    # next step, mirroring brick entry.
                    survivors.append(Ball(nr, nc, -vr, vc))
                else:
                    reward -= 1
                    state.lives -= 1
                    lost += 1
            elif self._brick_alive_at(state, nr, nc):
                br, bc = nr - cfg.brick_row_lo, nc - cfg.brick_col_lo
                state.brick_alive[br, bc] = False
                reward += 1
                survivors.append(Ball(nr, nc, -vr, vc))
            else:
                survivors.append(Ball(nr, nc, vr, vc))

        respawned = False
        if lost and not survivors and state.lives > 0:
            center = state.paddle_col + cfg.paddle_width // 2
            survivors = [Ball(h - 2, center, -1, state.serve_dir)]
            respawned = True
        state.balls = survivors
        return reward, respawned

    def _brick_alive_at(self, state: BreakoutState, row: int, col: int) -> bool:
        cfg = self.config
        if not (cfg.brick_row_lo <= row <= cfg.brick_row_hi):
            return False
        if not (cfg.brick_col_lo <= col <= cfg.brick_col_hi):
            return False
        return bool(state.brick_alive[row - cfg.brick_row_lo, col - cfg.brick_col_lo])

    def _respawn_prev_map(self, state: BreakoutState) -> np.ndarray:
        # The respawned ball sits one noop-step ahead of a legal on-paddle
        # position; rendering that predecessor yields a consistent older frame.
        cfg = self.config
        ball = state.balls[0]
        shadow = replace(
            state,
            balls=[Ball(cfg.grid_height - 1, ball.col - ball.vel_col, -1, ball.vel_col)],
            brick_alive=state.brick_alive,
        )
        return self._render(shadow)

    # -- rendering ----------------------------------------------------------

    def _render(self, state: BreakoutState) -> np.ndarray:
        cfg = self.config
        g = np.zeros((cfg.grid_height, cfg.grid_width), dtype=np.int8)
        g[0, :] = ObjectType.WALL
        g[:, 0] = ObjectType.WALL
        g[:, -1] = ObjectType.WALL
        rows = slice(cfg.brick_row_lo, cfg.brick_row_hi + 1)
        cols = slice(cfg.brick_col_lo, cfg.brick_col_hi + 1)
        g[rows, cols] = np.where(state.brick_alive, ObjectType.BRICK, ObjectType.VOID)
        g[-1, state.paddle_col:state.paddle_col + cfg.paddle_width] = ObjectType.PADDLE
        for ball in state.balls:
            g[ball.row, ball.col] = ObjectType.BALL
        return g


def render_ascii(type_map: np.ndarray) -> str:
    """One character per cell, by type."""
    return "\n".join(
        "".join(ASCII_CHARS[ObjectType(v)] for v in row) for row in type_map
    )
