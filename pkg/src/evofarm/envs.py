"""Game environments: pure seeded state machines emitting palette frames.

Every environment is fully determined by (seed, action sequence).  Frames
are 210x160 arrays of 7-bit palette indices; scores are integers read off
at any frame boundary.  The built-in games are

* ``catch`` (game id 0): a paddle under a falling ball.  Three effective
  actions (stay / left / right, action id mod 3) out of the full 18-action
  space, +1 per catch, game over after ten drops.
* ``replay`` (game id 1): plays back a recorded frame fixture with an
  optional per-frame score track; actions are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .preproc import FRAME_HEIGHT, FRAME_WIDTH, read_frame_fixture
from .rng import keyed_generator

__all__ = [
    "GAME_CATCH",
    "GAME_REPLAY",
    "GAME_NAMES",
    "EnvDescriptor",
    "EnvError",
    "CatchEnv",
    "ReplayEnv",
    "make_env",
]

GAME_CATCH = 0
GAME_REPLAY = 1
GAME_NAMES = {"catch": GAME_CATCH, "replay": GAME_REPLAY}

#: Default episode cap: five minutes of console time at 60 frames/second.
DEFAULT_FRAME_CAP = 18_000


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvDescriptor:
    """What to run: game, usable action count, episode frame cap."""

    game_id: int
    action_count: int = 18
    frame_cap: int = DEFAULT_FRAME_CAP
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 1 <= self.action_count <= 18:
            raise ValueError(f"action_count must be in 1..18, got {self.action_count}")
        if self.frame_cap < 1:
            raise ValueError(f"frame_cap must be positive, got {self.frame_cap}")


class _BaseEnv:
    """Common bookkeeping: frame counter, liveness, cap enforcement."""

    def __init__(self, descriptor: EnvDescriptor) -> None:
        self.descriptor = descriptor
        self.frame_index = 0
        self.score = 0
        self.alive = True
        self.dead_cause: str | None = None  # "game" | "cap"

    def _finish_step(self, game_over: bool) -> None:
        self.frame_index += 1
        if game_over:
            self.alive = False
            self.dead_cause = "game"
        elif self.frame_index >= self.descriptor.frame_cap:
            self.alive = False
            self.dead_cause = "cap"

    def _check_step(self, action: int) -> None:
        if not self.alive:
            raise EnvError("step() on a finished episode")
        if not 0 <= action < 18:
            raise EnvError(f"action {action} out of range")


class CatchEnv(_BaseEnv):
    """Catch the falling ball.  All geometry is in frame pixels."""

    BALL_COLOR = 7      # brightest grey
    PADDLE_COLOR = 15   # brightest entry of the first hue family
    WALL_COLOR = 40
    FLOOR_COLOR = 33

    def __init__(self, descriptor: EnvDescriptor) -> None:
        super().__init__(descriptor)
        p = descriptor.params
        self.ball_speed = int(p.get("ball_speed", 8))
        self.paddle_speed = int(p.get("paddle_speed", 6))
        self.paddle_width = int(p.get("paddle_width", 20))
        self.drops = int(p.get("drops", 10))
        self.spawn_gap = int(p.get("spawn_gap", 4))
        self.ball_size = 4
        self.paddle_top = 194
        self.spawn_row = 10
        self._background = self._render_background()
        self.reset(0)

    def _render_background(self) -> np.ndarray:
        bg = np.zeros((FRAME_HEIGHT, FRAME_WIDTH), dtype=np.uint8)
        cols = np.arange(FRAME_WIDTH)
        bg[0:6, :] = (8 + cols // 10)[None, :]  # banner: one band per hue family
        bg[200:, :] = self.FLOOR_COLOR
        bg[:, 0:4] = self.WALL_COLOR
        bg[:, -4:] = self.WALL_COLOR
        return bg

    def reset(self, seed: int) -> None:
        self.frame_index = 0
        self.score = 0
        self.alive = True
        self.dead_cause = None
        rng = keyed_generator(seed, "catch")
        lo, hi = 6, FRAME_WIDTH - 6 - self.ball_size
        self._ball_xs = rng.integers(lo, hi, size=self.drops, endpoint=True)
        self._drop = 0
        self._ball_x = int(self._ball_xs[0])
        self._ball_y = self.spawn_row
        self._gap_left = 0
        self._paddle_x = (FRAME_WIDTH - self.paddle_width) // 2

    def step(self, action: int) -> np.ndarray:
        self._check_step(action)
        effective = action % 3  # 0 stay, 1 left, 2 right
        if effective == 1:
            self._paddle_x -= self.paddle_speed
        elif effective == 2:
            self._paddle_x += self.paddle_speed
        self._paddle_x = min(max(self._paddle_x, 4), FRAME_WIDTH - 4 - self.paddle_width)

        game_over = False
        if self._gap_left > 0:
            self._gap_left -= 1
            if self._gap_left == 0 and self._drop < self.drops:
                self._ball_x = int(self._ball_xs[self._drop])
                self._ball_y = self.spawn_row
        else:
            self._ball_y += self.ball_speed
            if self._ball_y + self.ball_size > self.paddle_top:
                caught = (self._ball_x + self.ball_size > self._paddle_x
                          and self._ball_x < self._paddle_x + self.paddle_width)
                if caught:
                    self.score += 1
                self._drop += 1
                if self._drop >= self.drops:
                    game_over = True
                else:
                    self._gap_left = self.spawn_gap
                    self._ball_y = -100  # hidden until respawn

        frame = self._background.copy()
        frame[self.paddle_top:self.paddle_top + 4,
              self._paddle_x:self._paddle_x + self.paddle_width] = self.PADDLE_COLOR
        if self._ball_y >= 0:  # hidden (negative) during the respawn gap
            y = min(self._ball_y, FRAME_HEIGHT - self.ball_size)
            frame[y:y + self.ball_size, self._ball_x:self._ball_x + self.ball_size] = self.BALL_COLOR
        self._finish_step(game_over)
        return frame


class ReplayEnv(_BaseEnv):
    """Plays back a fixture; the score track gives the cumulative score."""

    def __init__(self, descriptor: EnvDescriptor) -> None:
        super().__init__(descriptor)
        p = descriptor.params
        if "frames" in p:
            self._frames = np.asarray(p["frames"], dtype=np.uint8)
        elif "fixture" in p:
            self._frames = read_frame_fixture(p["fixture"])
        else:
            raise EnvError("replay env needs 'frames' or 'fixture' in params")
        if len(self._frames) == 0:
            raise EnvError("replay fixture has no frames")
        track = p.get("score_track")
        if track is None:
            track = [0] * len(self._frames)
        if len(track) < len(self._frames):
            raise EnvError("score track shorter than fixture")
        self._track = [int(s) for s in track]
        self.reset(0)

    def reset(self, seed: int) -> None:
        self.frame_index = 0
        self.score = 0
        self.alive = True
        self.dead_cause = None

    def step(self, action: int) -> np.ndarray:
        self._check_step(action)
        frame = self._frames[self.frame_index]
        self.score = self._track[self.frame_index]
        self._finish_step(game_over=self.frame_index + 1 >= len(self._frames))
        return frame


_FACTORIES = {GAME_CATCH: CatchEnv, GAME_REPLAY: ReplayEnv}


def known_game(game_id: int) -> bool:
    return game_id in _FACTORIES


def make_env(descriptor: EnvDescriptor):
    """Instantiate the environment for a descriptor; unknown ids raise."""
    factory = _FACTORIES.get(descriptor.game_id)
    if factory is None:
        raise EnvError(f"unknown game id {descriptor.game_id}")
    return factory(descriptor)
