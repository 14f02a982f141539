"""Gateway side of the farm: connections, job dispatch, local fallback.

``Dispatcher`` runs a single scheduling loop: it keeps every free module
busy, collects completions by polling (the baseline) or from unsolicited
RESULT pushes, and re-dispatches the in-flight jobs of any worker that
drops.  Records are keyed by (genome id, eval seed), so the returned list —
in job submission order — is identical no matter how work was spread.

``LocalPool`` satisfies the same evaluate contract with in-process threads
and no sockets; because every record is a pure function of (genome,
descriptor, seed), its results are byte-identical to the networked farm's.
"""

from __future__ import annotations

import hashlib
import logging
import queue
import socket
import threading
import time
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from ..envs import EnvDescriptor
from ..evalmod import ROM_FIXTURE_OFFSET, WINDOW_PARAM, WINDOW_ROM, FitnessRecord, run_episode
from ..network import Genome
from ..preproc import fixture_to_bytes
from . import protocol as P

__all__ = [
    "WorkerInfo", "EvalJob", "FarmStats",
    "WorkerLost", "RemoteError", "DispatchError",
    "WorkerClient", "Dispatcher", "LocalPool", "dispatch", "in_process_pool",
]

log = logging.getLogger(__name__)


@dataclass
class WorkerInfo:
    """Address book entry for one worker."""

    address: str
    module_count: int = 2
    status: str = "connected"  # connected | lost

    def __post_init__(self) -> None:
        if self.module_count < 1:
            raise ValueError(f"module_count must be at least 1, got {self.module_count}")


@dataclass(frozen=True)
class EvalJob:
    """One evaluation: a genome, where to run it, and with what seed."""

    genome_id: int
    genome: Genome
    descriptor: EnvDescriptor
    eval_seed: int
    priority: int = 0

    def key(self) -> tuple[int, int]:
        return (self.genome_id, self.eval_seed)


@dataclass(frozen=True)
class FarmStats:
    aggregate_fps: float
    per_worker_fps: Mapping[str, float]
    jobs_in_flight: int
    bytes_in: int
    bytes_out: int


class WorkerLost(ConnectionError):
    """The peer went away; in-flight work must be re-dispatched."""


class RemoteError(RuntimeError):
    """The worker answered with an ERROR frame."""

    def __init__(self, code: int, message: str) -> None:
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.remote_message = message


class DispatchError(RuntimeError):
    """Dispatch could not finish; carries the records completed so far."""

    def __init__(self, message: str, completed: list[FitnessRecord]) -> None:
        super().__init__(message)
        self.completed = completed


_LOST = object()  # reader-thread sentinel


class WorkerClient:
    """One connection to a worker: framed requests plus a push inbox.

    ``latency`` injects a sleep before every status poll, modelling the
    round-trip cost of polling for the bench; pushed results and job
    setup traffic are unaffected.
    """

    def __init__(self, address: str, *, push: bool = False, latency: float = 0.0,
                 timeout: float = 30.0) -> None:
        host, sep, port = address.rpartition(":")
        if not sep:
            raise ValueError(f"worker address must be host:port, got {address!r}")
        self.address = address
        self.latency = latency
        self.timeout = timeout
        self.bytes_in = 0
        self.bytes_out = 0
        self.frames_done = 0
        self.alive = True
        # dispatcher bookkeeping: what each remote module currently holds
        self.module_genome: dict[int, int] = {}
        self.module_fixture: dict[int, int] = {}
        self.uploaded: set[int] = set()
        self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._io_lock = threading.Lock()
        self._pending: deque[queue.SimpleQueue] = deque()
        self.push_inbox: queue.SimpleQueue = queue.SimpleQueue()
        self._reader = threading.Thread(target=self._read_loop,
                                        name=f"reader-{address}", daemon=True)
        self._reader.start()
        hello = self.request(P.Hello(push=push))
        self.module_count = hello.module_count
        self.push_enabled = hello.push_enabled

    # -- plumbing -------------------------------------------------------------

    def _read_loop(self) -> None:
        try:
            while True:
                msg_type, payload = P.read_frame(self._sock)
                self.bytes_in += 10 + len(payload)
                if msg_type == P.MSG_RESULT:
                    self.push_inbox.put(P.JobResult.decode(payload))
                    continue
                with self._io_lock:
                    slot = self._pending.popleft() if self._pending else None
                if slot is None:
                    log.warning("unsolicited frame type %d from %s", msg_type,
                                self.address)
                    continue
                slot.put((msg_type, payload))
        except (ConnectionError, OSError, P.ProtocolError) as exc:
            log.debug("reader for %s finished: %s", self.address, exc)
        finally:
            self.alive = False
            with self._io_lock:
                pending, self._pending = list(self._pending), deque()
            for slot in pending:
                slot.put(_LOST)
            self.push_inbox.put(_LOST)

    def request(self, msg, msg_type: int | None = None):
        """Send one request and block for its reply (FIFO order)."""
        if self.latency and msg.TYPE == P.MSG_POLL:
            time.sleep(self.latency)
        slot: queue.SimpleQueue = queue.SimpleQueue()
        with self._io_lock:
            if not self.alive:
                raise WorkerLost(self.address)
            self._pending.append(slot)
            try:
                self.bytes_out += P.write_frame(self._sock, msg, msg_type)
            except (ConnectionError, OSError) as exc:
                self._pending.remove(slot)
                self.alive = False
                raise WorkerLost(f"{self.address}: {exc}") from exc
        try:
            reply = slot.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise WorkerLost(f"{self.address}: request timed out")
        if reply is _LOST:
            raise WorkerLost(self.address)
        reply_type, payload = reply
        if reply_type == P.MSG_ERROR:
            err = P.Error.decode(payload)
            raise RemoteError(err.code, err.message)
        if reply_type != (msg_type if msg_type is not None else msg.TYPE):
            raise P.ProtocolError(
                f"reply type {reply_type} for request type {msg.TYPE}")
        return P.decode_reply(reply_type, payload)

    def next_push(self, timeout: float | None):
        """Next pushed JobResult, None on timeout; WorkerLost when dead."""
        try:
            item = self.push_inbox.get(timeout=timeout) if timeout is not None \
                else self.push_inbox.get_nowait()
        except queue.Empty:
            return None
        if item is _LOST:
            self.push_inbox.put(_LOST)  # keep the sentinel for other callers
            raise WorkerLost(self.address)
        return item

    def close(self) -> None:
        self.alive = False
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def info(self) -> WorkerInfo:
        return WorkerInfo(self.address, self.module_count,
                          "connected" if self.alive else "lost")


def _normalize_jobs(jobs: Sequence, descriptor: EnvDescriptor | None) -> list[EvalJob]:
    out = []
    for item in jobs:
        if isinstance(item, EvalJob):
            out.append(item)
            continue
        genome, seed = item
        if descriptor is None:
            raise ValueError("plain (genome, seed) jobs need a default descriptor")
        out.append(EvalJob(genome_id=genome.genome_id, genome=genome,
                           descriptor=descriptor, eval_seed=int(seed)))
    return out


def _fixture_id(blob: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(),
                          "little") or 1


class Dispatcher:
    """Maps evaluation jobs onto free remote modules, deterministically."""

    def __init__(self, clients: Sequence[WorkerClient], *,
                 descriptor: EnvDescriptor | None = None,
                 poll_interval: float = 0.001) -> None:
        if not clients:
            raise ValueError("dispatcher needs at least one worker client")
        self.clients = list(clients)
        self.descriptor = descriptor
        self.poll_interval = poll_interval
        # pinned frames array -> (fixture id, blob); the reference keeps id() stable
        self._fixtures: dict[int, tuple[Any, int, bytes]] = {}
        self._busy_seconds = 0.0
        self._in_flight_now = 0

    # -- public API ---------------------------------------------------------------

    def evaluate(self, jobs: Sequence, descriptor: EnvDescriptor | None = None
                 ) -> list[FitnessRecord]:
        t0 = time.monotonic()
        try:
            return self._evaluate(_normalize_jobs(
                jobs, descriptor or self.descriptor))
        finally:
            self._busy_seconds += time.monotonic() - t0
            self._in_flight_now = 0

    def stats(self) -> FarmStats:
        elapsed = max(self._busy_seconds, 1e-9)
        per_worker = {c.address: c.frames_done / elapsed for c in self.clients}
        return FarmStats(
            aggregate_fps=sum(per_worker.values()),
            per_worker_fps=per_worker,
            jobs_in_flight=self._in_flight_now,
            bytes_in=sum(c.bytes_in for c in self.clients),
            bytes_out=sum(c.bytes_out for c in self.clients),
        )

    def worker_info(self) -> list[WorkerInfo]:
        return [c.info() for c in self.clients]

    def close(self) -> None:
        for client in self.clients:
            client.close()

    def __enter__(self) -> "Dispatcher":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- scheduling loop ---------------------------------------------------------

    def _evaluate(self, jobs: list[EvalJob]) -> list[FitnessRecord]:
        if not jobs:
            return []
        order = sorted(range(len(jobs)), key=lambda i: (-jobs[i].priority, i))
        pending: deque[EvalJob] = deque(jobs[i] for i in order)
        submit_order: dict[int, int] = {}
        for i, job in enumerate(jobs):
            submit_order.setdefault(id(job), i)
        results: dict[tuple[int, int], deque[FitnessRecord]] = defaultdict(deque)
        in_flight: dict[tuple[WorkerClient, int], EvalJob] = {}
        free: deque[tuple[WorkerClient, int]] = deque(
            (c, m) for c in self.clients if c.alive for m in range(c.module_count))

        def drop(client: WorkerClient) -> None:
            client.close()
            nonlocal free
            free = deque(slot for slot in free if slot[0] is not client)
            stranded = [(slot, job) for slot, job in in_flight.items()
                        if slot[0] is client]
            for slot, job in stranded:
                del in_flight[slot]
            # requeue in original submission order, ahead of untouched work
            for slot, job in sorted(stranded,
                                    key=lambda sj: submit_order[id(sj[1])],
                                    reverse=True):
                pending.appendleft(job)
            if stranded:
                log.warning("worker %s lost; re-dispatching %d jobs",
                            client.address, len(stranded))

        def completed_in_order() -> list[FitnessRecord]:
            taken: dict[tuple[int, int], int] = defaultdict(int)
            done = []
            for job in jobs:
                k = job.key()
                if taken[k] < len(results[k]):
                    done.append(results[k][taken[k]])
                    taken[k] += 1
            return done

        def settle(slot, result: P.JobResult) -> None:
            job = in_flight.pop(slot)
            if result.flag == P.FLAG_FAILURE:
                raise DispatchError(
                    f"job {job.key()} failed on {slot[0].address}: "
                    f"[{result.errcode}] {result.errmsg}", completed_in_order())
            record = FitnessRecord(genome_id=result.genome_id, score=result.score,
                                   frames=result.frames,
                                   termination=result.termination,
                                   eval_seed=result.eval_seed)
            if record.key() != job.key():
                raise DispatchError(
                    f"worker {slot[0].address} returned record {record.key()} "
                    f"for job {job.key()}", completed_in_order())
            results[record.key()].append(record)
            slot[0].frames_done += record.frames
            free.append(slot)

        while pending or in_flight:
            progress = False
            while pending and free:
                slot = free.popleft()
                job = pending.popleft()
                try:
                    self._launch(slot, job)
                except (WorkerLost, ConnectionError):
                    pending.appendleft(job)
                    drop(slot[0])
                    continue
                in_flight[slot] = job
                self._in_flight_now = len(in_flight)
                progress = True

            if (pending or in_flight) and not any(c.alive for c in self.clients):
                raise DispatchError("all workers lost", completed_in_order())

            # pushed completions
            for client in {slot[0] for slot in in_flight}:
                if not client.push_enabled:
                    continue
                while True:
                    try:
                        result = client.next_push(None)
                    except WorkerLost:
                        drop(client)
                        break
                    if result is None:
                        break
                    slot = (client, result.module)
                    if slot in in_flight:
                        settle(slot, result)
                        progress = True

            # polled completions
            for slot in list(in_flight):
                client = slot[0]
                if client.push_enabled:
                    continue
                try:
                    result = client.request(P.Poll(slot[1]))
                except (WorkerLost, ConnectionError):
                    drop(client)
                    continue
                if result.flag != P.FLAG_PENDING:
                    settle(slot, result)
                    progress = True

            self._in_flight_now = len(in_flight)
            if not progress and in_flight:
                time.sleep(self.poll_interval)

        out = []
        taken: dict[tuple[int, int], int] = defaultdict(int)
        for job in jobs:
            k = job.key()
            if taken[k] >= len(results[k]):
                raise DispatchError(f"no record for job {k}", completed_in_order())
            out.append(results[k][taken[k]])
            taken[k] += 1
        return out

    # -- per-job wire work --------------------------------------------------------

    def _upload(self, client: WorkerClient, module: int, window: int,
                object_id: int, offset: int, blob: bytes) -> None:
        if object_id and object_id in client.uploaded:
            try:
                client.request(P.BulkWrite(module, window, object_id, offset))
                return
            except RemoteError as exc:
                if exc.code != P.ERR_UNKNOWN_OBJECT:
                    raise
                client.uploaded.discard(object_id)  # evicted; send bytes again
        client.request(P.BulkWrite(module, window, object_id, offset, blob))
        if object_id:
            client.uploaded.add(object_id)

    def _fixture_for(self, job: EvalJob) -> tuple[int, bytes] | None:
        frames = job.descriptor.params.get("frames")
        if frames is None:
            return None
        entry = self._fixtures.get(id(frames))
        if entry is None or entry[0] is not frames:
            blob = fixture_to_bytes(frames)
            entry = (frames, _fixture_id(blob), blob)
            self._fixtures[id(frames)] = entry
        return entry[1], entry[2]

    def _launch(self, slot: tuple[WorkerClient, int], job: EvalJob) -> None:
        client, module = slot
        if client.module_genome.get(module) != job.genome_id or not job.genome_id:
            blob = job.genome.weights.astype("<i2", copy=False).tobytes()
            self._upload(client, module, WINDOW_PARAM, job.genome_id, 0, blob)
            client.module_genome[module] = job.genome_id
        fixture = self._fixture_for(job)
        if fixture is not None and client.module_fixture.get(module) != fixture[0]:
            self._upload(client, module, WINDOW_ROM, fixture[0],
                         ROM_FIXTURE_OFFSET, fixture[1])
            client.module_fixture[module] = fixture[0]
        wire_params = {k: v for k, v in job.descriptor.params.items()
                       if k != "frames"}
        client.request(P.StartJob(
            module=module, genome_id=job.genome_id, eval_seed=job.eval_seed,
            game_id=job.descriptor.game_id,
            action_count=job.descriptor.action_count,
            frame_cap=job.descriptor.frame_cap, params=wire_params))


class LocalPool:
    """In-process evaluator with the same contract as the networked farm."""

    def __init__(self, threads: int = 1, *,
                 descriptor: EnvDescriptor | None = None,
                 palette=None) -> None:
        if threads < 1:
            raise ValueError(f"threads must be at least 1, got {threads}")
        self.threads = threads
        self.descriptor = descriptor
        self._palette = palette
        self._executor = ThreadPoolExecutor(max_workers=threads,
                                            thread_name_prefix="evalpool")
        self._busy_seconds = 0.0
        self._frames = 0
        self._in_flight = 0

    def evaluate(self, jobs: Sequence, descriptor: EnvDescriptor | None = None
                 ) -> list[FitnessRecord]:
        norm = _normalize_jobs(jobs, descriptor or self.descriptor)
        t0 = time.monotonic()
        self._in_flight = len(norm)
        try:
            futures = [
                self._executor.submit(run_episode, job.genome, job.descriptor,
                                      job.eval_seed, palette=self._palette)
                for job in norm
            ]
            records = [f.result() for f in futures]
        finally:
            self._busy_seconds += time.monotonic() - t0
            self._in_flight = 0
        self._frames += sum(r.frames for r in records)
        return records

    def stats(self) -> FarmStats:
        fps = self._frames / max(self._busy_seconds, 1e-9)
        return FarmStats(aggregate_fps=fps, per_worker_fps={"local": fps},
                         jobs_in_flight=self._in_flight, bytes_in=0, bytes_out=0)

    def close(self) -> None:
        self._executor.shutdown(wait=False, cancel_futures=True)

    def __enter__(self) -> "LocalPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def in_process_pool(threads: int = 1, *, descriptor: EnvDescriptor | None = None,
                    palette=None) -> LocalPool:
    return LocalPool(threads, descriptor=descriptor, palette=palette)


def dispatch(jobs: Sequence, workers: Sequence, *,
             descriptor: EnvDescriptor | None = None, push: bool = False,
             latency: float = 0.0) -> list[FitnessRecord]:
    """Connect to the given workers, run the jobs, and tear down."""
    clients = []
    for w in workers:
        address = w.address if isinstance(w, WorkerInfo) else str(w)
        try:
            clients.append(WorkerClient(address, push=push, latency=latency))
        except OSError as exc:
            log.warning("worker %s unreachable: %s", address, exc)
    if not clients:
        raise DispatchError("no workers reachable", [])
    try:
        return Dispatcher(clients, descriptor=descriptor).evaluate(jobs)
    finally:
        for client in clients:
            client.close()
