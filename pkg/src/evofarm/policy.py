"""Action selection: argmax policy with sticky actions from an LFSR.

Stochasticity on the game side comes from a single maximal-length 41-bit
Fibonacci LFSR per episode.  Each console frame one 16-bit uniform is drawn
(MSB first) and compared against the stickiness threshold: with probability
0.25 the previously emitted action repeats, otherwise the pending action
(the latest network argmax, held for four frames) goes out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Lfsr",
    "make_lfsr41",
    "LFSR41_TAPS",
    "LFSR8_TAPS",
    "STICKINESS",
    "PolicyState",
    "select_action",
    "apply_sticky",
]

#: Maximal-length tap pairs (1-based, counting from the output end).
LFSR41_TAPS = (41, 38)
#: Width-8 validation instance; visits all 255 nonzero states.
LFSR8_TAPS = (8, 6, 5, 4)

STICKINESS = 0.25

_REV8 = [int(f"{i:08b}"[::-1], 2) for i in range(256)]
_REV16 = [(_REV8[i & 0xFF] << 8) | _REV8[i >> 8] for i in range(65536)]


@dataclass
class Lfsr:
    """Fibonacci LFSR: output is bit 0, feedback XOR enters at the top."""

    width: int
    taps: tuple[int, ...]
    state: int

    def __post_init__(self) -> None:
        mask = (1 << self.width) - 1
        self.state &= mask
        if self.state == 0:
            raise ValueError("LFSR state must be nonzero")
        if any(not 1 <= t <= self.width for t in self.taps):
            raise ValueError(f"taps {self.taps} outside width {self.width}")

    def next_bit(self) -> int:
        # Bit 0 holds the oldest sequence value s[n-width]; the recurrence
        # s[n] = XOR of s[n-t] over the taps reads bit (width - t).
        out = self.state & 1
        fb = 0
        for t in self.taps:
            fb ^= (self.state >> (self.width - t)) & 1
        self.state = (self.state >> 1) | (fb << (self.width - 1))
        return out

    def next_uniform(self) -> float:
        """16 successive bits, MSB first, scaled to [0, 1).

        When the register is wide enough that 16 steps never read a freshly
        inserted bit (width - min tap distance > 16), the 16 output bits are
        just the low state bits and all 16 feedback bits depend only on the
        current state, so the whole draw collapses into a few word ops.  The
        bit-at-a-time path is the reference; both must agree exactly.
        """
        if self.width - max(self.width - t for t in self.taps) > 16:
            s = self.state
            value = _REV16[s & 0xFFFF]
            fb = 0
            for t in self.taps:
                fb ^= s >> (self.width - t)
            self.state = (s >> 16) | ((fb & 0xFFFF) << (self.width - 16))
            return value / 65536.0
        value = 0
        for _ in range(16):
            value = (value << 1) | self.next_bit()
        return value / 65536.0


def make_lfsr41(seed: int) -> Lfsr:
    """Seed the standard 41-bit register; a zero seed falls back to 1."""
    state = seed & ((1 << 41) - 1)
    return Lfsr(41, LFSR41_TAPS, state or 1)


@dataclass
class PolicyState:
    """Per-episode sticky-action state."""

    rng: Lfsr
    stickiness: float = STICKINESS
    current_action: int = 0  # last emitted action; NOOP before the first frame
    started: bool = False


def select_action(q: np.ndarray) -> int:
    """Argmax over the action values; ties resolve to the lowest index."""
    return int(np.argmax(q))


def apply_sticky(state: PolicyState, pending: int) -> int:
    """Emit one action for this frame, mutating the policy state.

    A uniform is drawn every frame.  The very first frame of an episode
    emits the pending action unconditionally (the draw is still consumed);
    afterwards the previous action repeats when the draw lands under the
    stickiness threshold.
    """
    draw = state.rng.next_uniform()
    if state.started and draw < state.stickiness:
        emitted = state.current_action
    else:
        emitted = pending
    state.current_action = emitted
    state.started = True
    return emitted
