"""Fitness evaluation module: one episode, one genome, one seed.

``run_episode`` drives the closed loop.  Per console frame it emits an
action through the sticky policy, steps the environment, and advances the
luminance/pooling stages; every fourth frame the pooled history is rescaled,
stacked, pushed through the quantized network, and the argmax becomes the
pending action for the next four frames.

``EvalModule`` wraps the same loop behind a hardware-style register file:
configuration and parameter upload while idle, START/STOP/RESET commands,
and non-blocking reads of status, score, frame and clock counters while the
episode runs on a background thread.  The register map is documented in
PROTOCOL.md.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .envs import GAME_REPLAY, EnvDescriptor, known_game, make_env
from .network import Genome, QuantizedNet, default_spec
from .policy import STICKINESS, PolicyState, apply_sticky, make_lfsr41, select_action
from .preproc import FramePipeline, default_palette, parse_frame_fixture
from .rng import derive_u64

__all__ = [
    "FitnessRecord",
    "run_episode",
    "EvalModule",
    "RegisterError",
    # register map
    "REG_GAME_ID", "REG_STATUS", "REG_SCORE", "REG_FRAMES", "REG_CLOCK",
    "REG_COMMAND", "REG_FRAME_CAP", "REG_ACTION_COUNT",
    "STATUS_IDLE", "STATUS_RUNNING", "STATUS_DONE_DEAD", "STATUS_DONE_TIMEOUT",
    "CMD_RESET", "CMD_START", "CMD_STOP",
    "WINDOW_PARAM", "WINDOW_ROM", "PARAM_WINDOW_BASE", "ROM_WINDOW_BASE",
    "ROM_SEED_OFFSET", "ROM_PARAMS_OFFSET", "ROM_FIXTURE_OFFSET",
]

# --- register map -----------------------------------------------------------

REG_GAME_ID = 0x00       # rw
REG_STATUS = 0x04        # ro
REG_SCORE = 0x08         # ro, i32 as two's-complement u32
REG_FRAMES = 0x0C        # ro
REG_CLOCK = 0x10         # ro, u64 nanoseconds since START
REG_COMMAND = 0x18       # wo
REG_FRAME_CAP = 0x1C     # rw
REG_ACTION_COUNT = 0x20  # rw

STATUS_IDLE = 0
STATUS_RUNNING = 1
STATUS_DONE_DEAD = 2
STATUS_DONE_TIMEOUT = 3

CMD_RESET = 1 << 0
CMD_START = 1 << 1
CMD_STOP = 1 << 2

WINDOW_PARAM = 0
WINDOW_ROM = 1
PARAM_WINDOW_BASE = 0x10000
ROM_WINDOW_BASE = 0x80000
ROM_WINDOW_SIZE = 1 << 20

# ROM window job area: eval seed, then a small env-params blob (u32 length +
# UTF-8 JSON), with replay fixtures at a fixed offset so cached fixture bytes
# land at the same place regardless of params size.
ROM_SEED_OFFSET = 0
ROM_PARAMS_OFFSET = 8
ROM_FIXTURE_OFFSET = 0x1000

_TERMINATION_STATUS = {"dead": STATUS_DONE_DEAD,
                       "timeout": STATUS_DONE_TIMEOUT,
                       # an externally stopped episode reads back as a timeout
                       "stopped": STATUS_DONE_TIMEOUT}


class RegisterError(RuntimeError):
    """Bad address, illegal transition, or a write the state forbids."""

    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


# error codes shared with the wire protocol
ERR_BAD_ADDRESS = 1
ERR_BAD_STATE = 2
ERR_BAD_WINDOW = 3
ERR_NO_GENOME = 4
ERR_BAD_VALUE = 5


@dataclass(frozen=True)
class FitnessRecord:
    """Result of one evaluation; deterministic in (genome, descriptor, seed)."""

    genome_id: int
    score: int
    frames: int
    termination: str  # "dead" | "timeout" | "stopped"
    eval_seed: int

    def key(self) -> tuple[int, int]:
        return (self.genome_id, self.eval_seed)


_palette_cache: np.ndarray | None = None


def _shared_palette() -> np.ndarray:
    global _palette_cache
    if _palette_cache is None:
        _palette_cache = default_palette()
    return _palette_cache


def run_episode(
    genome: Genome,
    descriptor: EnvDescriptor,
    seed: int,
    *,
    palette: np.ndarray | None = None,
    net: QuantizedNet | None = None,
    stickiness: float = STICKINESS,
    stop: threading.Event | None = None,
    on_frame=None,
) -> FitnessRecord:
    """Run one episode to termination and return its fitness record.

    ``stop`` is polled at every frame boundary; ``on_frame(frames, score,
    clock_ns)`` is invoked after each frame for register mirroring.
    """
    env = make_env(descriptor)
    env.reset(seed)
    pipeline = FramePipeline(palette if palette is not None else _shared_palette())
    if net is None:
        net = QuantizedNet(default_spec())
    net.load(genome)
    policy = PolicyState(rng=make_lfsr41(derive_u64(seed, "lfsr")), stickiness=stickiness)

    pending = 0
    inferences = 0
    t0 = time.monotonic_ns()
    termination = None
    while True:
        action = apply_sticky(policy, pending)
        frame = env.step(action)
        x = pipeline.push(frame)
        if x is not None:
            pending = select_action(net.forward(x))
            inferences += 1
        if on_frame is not None:
            on_frame(env.frame_index, env.score, time.monotonic_ns() - t0)
        if not env.alive:
            termination = "dead" if env.dead_cause == "game" else "timeout"
            break
        if stop is not None and stop.is_set():
            termination = "stopped"
            break

    assert inferences == env.frame_index // 4, "inference cadence broken"
    return FitnessRecord(
        genome_id=genome.genome_id,
        score=env.score,
        frames=env.frame_index,
        termination=termination,
        eval_seed=seed,
    )


class EvalModule:
    """One evaluation module behind its register file.

    Reads never block on the episode: the worker thread publishes a
    (frames, score, clock) snapshot tuple each frame and readers just load
    it.  Window writes and configuration writes are rejected while RUNNING.
    """

    def __init__(self, palette: np.ndarray | None = None) -> None:
        self.spec = default_spec()
        self._palette = palette if palette is not None else _shared_palette()
        self._param_bytes = bytearray(2 * self.spec.total_params)
        self._param_covered: list[tuple[int, int]] = []
        self._rom_bytes = bytearray(ROM_WINDOW_SIZE)
        self._rom_written = 0
        self._game_id = 0
        self._frame_cap = 18_000
        self._action_count = 18
        self._status = STATUS_IDLE
        self._snap = (0, 0, 0)  # frames, score, clock_ns
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        self._record: FitnessRecord | None = None
        self._error: Exception | None = None
        self._job_ids = (0, 0)  # genome_id, eval_seed for the current job
        self._net = QuantizedNet(self.spec)
        self._lock = threading.Lock()  # serialises commands, not reads

    # -- window plumbing ----------------------------------------------------

    def _mark_covered(self, start: int, end: int) -> None:
        merged = []
        for s, e in self._param_covered + [(start, end)]:
            merged.append((s, e))
        merged.sort()
        out = [merged[0]]
        for s, e in merged[1:]:
            if s <= out[-1][1]:
                out[-1] = (out[-1][0], max(out[-1][1], e))
            else:
                out.append((s, e))
        self._param_covered = out

    def _params_loaded(self) -> bool:
        size = len(self._param_bytes)
        return self._param_covered == [(0, size)]

    def bulk_write(self, window: int, offset: int, data: bytes) -> None:
        with self._lock:
            if self._status == STATUS_RUNNING:
                raise RegisterError(ERR_BAD_STATE, "window write while RUNNING")
            if window == WINDOW_PARAM:
                buf = self._param_bytes
            elif window == WINDOW_ROM:
                buf = self._rom_bytes
            else:
                raise RegisterError(ERR_BAD_WINDOW, f"unknown window {window}")
            if offset < 0 or offset + len(data) > len(buf):
                raise RegisterError(ERR_BAD_ADDRESS,
                                    f"window {window} write [{offset}, {offset + len(data)}) out of bounds")
            buf[offset:offset + len(data)] = data
            if window == WINDOW_PARAM:
                self._mark_covered(offset, offset + len(data))
            else:
                self._rom_written = max(self._rom_written, offset + len(data))

    def load_genome_direct(self, genome: Genome) -> None:
        """Fast path used by the worker: install a cached genome object."""
        with self._lock:
            if self._status == STATUS_RUNNING:
                raise RegisterError(ERR_BAD_STATE, "genome load while RUNNING")
            raw = genome.weights.astype("<i2").tobytes()
            self._param_bytes[:] = raw
            self._param_covered = [(0, len(self._param_bytes))]
            self._job_ids = (genome.genome_id, self._job_ids[1])

    def set_eval_seed(self, seed: int) -> None:
        """Fast path: equivalent to writing the seed into the ROM window."""
        self.bulk_write(WINDOW_ROM, ROM_SEED_OFFSET, int(seed).to_bytes(8, "little"))
        self._job_ids = (self._job_ids[0], int(seed))

    def set_genome_id(self, genome_id: int) -> None:
        """Record which genome the parameter window holds (job metadata only)."""
        self._job_ids = (int(genome_id), self._job_ids[1])

    def set_env_params(self, params: Mapping[str, Any]) -> None:
        """Write env params (JSON) into the ROM window job area."""
        blob = json.dumps(dict(params), sort_keys=True).encode("utf-8")
        if len(blob) > ROM_FIXTURE_OFFSET - ROM_PARAMS_OFFSET - 4:
            raise RegisterError(ERR_BAD_VALUE, f"env params blob too large ({len(blob)})")
        self.bulk_write(WINDOW_ROM, ROM_PARAMS_OFFSET,
                        len(blob).to_bytes(4, "little") + blob)

    # -- registers ------------------------------------------------------------

    def register_read(self, addr: int) -> int:
        if addr == REG_GAME_ID:
            return self._game_id
        if addr == REG_STATUS:
            return self._status
        if addr == REG_SCORE:
            return self._snap[1] & 0xFFFFFFFF
        if addr == REG_FRAMES:
            return self._snap[0]
        if addr == REG_CLOCK:
            return self._snap[2]
        if addr == REG_FRAME_CAP:
            return self._frame_cap
        if addr == REG_ACTION_COUNT:
            return self._action_count
        if addr == REG_COMMAND:
            raise RegisterError(ERR_BAD_ADDRESS, "command register is write-only")
        raise RegisterError(ERR_BAD_ADDRESS, f"no readable register at {addr:#x}")

    def register_write(self, addr: int, value: int) -> None:
        if addr == REG_COMMAND:
            self._command(value)
            return
        with self._lock:
            if self._status == STATUS_RUNNING:
                raise RegisterError(ERR_BAD_STATE, "configuration write while RUNNING")
            if addr == REG_GAME_ID:
                self._game_id = int(value)
            elif addr == REG_FRAME_CAP:
                if value < 1:
                    raise RegisterError(ERR_BAD_VALUE, "frame cap must be positive")
                self._frame_cap = int(value)
            elif addr == REG_ACTION_COUNT:
                if not 1 <= value <= 18:
                    raise RegisterError(ERR_BAD_VALUE, "action count must be 1..18")
                self._action_count = int(value)
            elif addr in (REG_STATUS, REG_SCORE, REG_FRAMES, REG_CLOCK):
                raise RegisterError(ERR_BAD_ADDRESS, f"register {addr:#x} is read-only")
            else:
                raise RegisterError(ERR_BAD_ADDRESS, f"no writable register at {addr:#x}")

    # -- commands -------------------------------------------------------------

    def _command(self, value: int) -> None:
        if value & CMD_RESET:
            self._reset()
        if value & CMD_START:
            self._start()
        if value & CMD_STOP:
            self._stop_cmd()

    def _reset(self) -> None:
        with self._lock:
            thread = self._thread
            if thread is not None:
                self._stop.set()
        if thread is not None:
            thread.join()
        with self._lock:
            self._thread = None
            self._stop = threading.Event()
            self._record = None
            self._error = None
            self._snap = (0, 0, 0)
            self._status = STATUS_IDLE

    def _start(self) -> None:
        with self._lock:
            if self._status != STATUS_IDLE:
                raise RegisterError(ERR_BAD_STATE, "START outside IDLE")
            if not known_game(self._game_id):
                raise RegisterError(ERR_BAD_VALUE, f"unknown game id {self._game_id}")
            if not self._params_loaded():
                raise RegisterError(ERR_NO_GENOME, "START without a full parameter upload")
            genome = Genome(np.frombuffer(bytes(self._param_bytes), dtype="<i2"),
                            genome_id=self._job_ids[0])
            seed = int.from_bytes(
                self._rom_bytes[ROM_SEED_OFFSET:ROM_SEED_OFFSET + 8], "little")
            plen = int.from_bytes(
                self._rom_bytes[ROM_PARAMS_OFFSET:ROM_PARAMS_OFFSET + 4], "little")
            if plen > ROM_FIXTURE_OFFSET - ROM_PARAMS_OFFSET - 4:
                raise RegisterError(ERR_BAD_VALUE, f"env params blob too large ({plen})")
            params = {}
            if plen:
                blob = bytes(self._rom_bytes[ROM_PARAMS_OFFSET + 4:
                                             ROM_PARAMS_OFFSET + 4 + plen])
                try:
                    params = json.loads(blob.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise RegisterError(ERR_BAD_VALUE, f"bad env params blob: {exc}")
                if not isinstance(params, dict):
                    raise RegisterError(ERR_BAD_VALUE, "env params blob is not an object")
            if self._game_id == GAME_REPLAY and "fixture" not in params:
                blob = bytes(self._rom_bytes[ROM_FIXTURE_OFFSET:
                                             max(self._rom_written, ROM_FIXTURE_OFFSET)])
                try:
                    params["frames"] = parse_frame_fixture(blob, origin="rom window",
                                                           allow_trailing=True)
                except ValueError as exc:
                    raise RegisterError(ERR_BAD_VALUE, str(exc))
            descriptor = EnvDescriptor(game_id=self._game_id,
                                       action_count=self._action_count,
                                       frame_cap=self._frame_cap,
                                       params=params)
            self._record = None
            self._error = None
            self._job_ids = (self._job_ids[0], seed)
            self._status = STATUS_RUNNING
            stop = self._stop
            self._thread = threading.Thread(
                target=self._run, args=(genome, descriptor, seed, stop), daemon=True
            )
            self._thread.start()

    def _stop_cmd(self) -> None:
        with self._lock:
            if self._status != STATUS_RUNNING:
                raise RegisterError(ERR_BAD_STATE, "STOP outside RUNNING")
            self._stop.set()

    def _run(self, genome: Genome, descriptor: EnvDescriptor, seed: int,
             stop: threading.Event) -> None:
        def on_frame(frames: int, score: int, clock: int) -> None:
            self._snap = (frames, score, clock)

        try:
            record = run_episode(genome, descriptor, seed,
                                 palette=self._palette, net=self._net,
                                 stop=stop, on_frame=on_frame)
        except Exception as exc:  # surfaced on take_record, never hangs a poller
            logging.getLogger(__name__).exception("episode failed")
            self._error = exc
            self._status = STATUS_DONE_DEAD
            return
        self._record = record
        self._status = _TERMINATION_STATUS[record.termination]

    # -- results ----------------------------------------------------------------

    @property
    def status(self) -> int:
        return self._status

    def wait(self, timeout: float | None = None) -> bool:
        """Block until the running episode finishes; False on timeout."""
        with self._lock:
            thread = self._thread
        if thread is None:
            return True
        thread.join(timeout)
        return not thread.is_alive()

    def take_record(self) -> FitnessRecord | None:
        """The finished record, with the job's genome id and seed attached."""
        if self._error is not None:
            raise self._error
        record = self._record
        if record is None:
            return None
        return FitnessRecord(genome_id=self._job_ids[0], score=record.score,
                             frames=record.frames, termination=record.termination,
                             eval_seed=self._job_ids[1])
