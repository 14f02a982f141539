"""Worker process: hosts evaluation modules behind the wire protocol.

One listening socket, one thread per connection; each module instance runs
its episodes on its own background thread (the in-process module already
does), so a worker with M modules evaluates M episodes concurrently.
Genome and fixture payloads are cached by object id in a bounded LRU so a
gateway uploads each blob once per worker and replays it by id afterwards.
"""

from __future__ import annotations

import logging
import socket
import threading
from collections import OrderedDict

from ..evalmod import (
    CMD_RESET,
    CMD_START,
    ERR_BAD_VALUE,
    ROM_FIXTURE_OFFSET,
    REG_ACTION_COUNT,
    REG_COMMAND,
    REG_FRAME_CAP,
    REG_GAME_ID,
    STATUS_DONE_DEAD,
    STATUS_DONE_TIMEOUT,
    EvalModule,
    RegisterError,
    WINDOW_PARAM,
)
from . import protocol as P

__all__ = ["WorkerServer", "serve_worker", "DEFAULT_MODULE_COUNT", "BLOB_CACHE_SIZE"]

log = logging.getLogger(__name__)

DEFAULT_MODULE_COUNT = 2
BLOB_CACHE_SIZE = 64  # cached genome/fixture payloads per worker

_DONE = (STATUS_DONE_DEAD, STATUS_DONE_TIMEOUT)


class _BlobCache:
    """Bounded LRU of uploaded payloads, keyed by object id."""

    def __init__(self, capacity: int) -> None:
        self._items: OrderedDict[int, bytes] = OrderedDict()
        self._capacity = capacity
        self._lock = threading.Lock()

    def put(self, object_id: int, data: bytes) -> bool:
        """Store (idempotent); True if the id was already cached."""
        with self._lock:
            hit = object_id in self._items
            self._items[object_id] = data
            self._items.move_to_end(object_id)
            while len(self._items) > self._capacity:
                self._items.popitem(last=False)
            return hit

    def get(self, object_id: int) -> bytes | None:
        with self._lock:
            data = self._items.get(object_id)
            if data is not None:
                self._items.move_to_end(object_id)
            return data


class WorkerServer:
    """Listens on host:port and serves module_count evaluation modules."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 module_count: int = DEFAULT_MODULE_COUNT, *,
                 cache_size: int = BLOB_CACHE_SIZE,
                 frame_cap_limit: int | None = None) -> None:
        if module_count < 1:
            raise ValueError(f"module_count must be at least 1, got {module_count}")
        self.frame_cap_limit = frame_cap_limit
        self.modules = [EvalModule() for _ in range(module_count)]
        # one lock per module so a job setup sequence is never interleaved
        self._module_locks = [threading.Lock() for _ in range(module_count)]
        self._active = [(0, 0)] * module_count  # (genome_id, eval_seed) per module
        self._blobs = _BlobCache(cache_size)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen()
        self.address = "%s:%d" % self._sock.getsockname()[:2]
        self._closing = False
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        self._accept_thread: threading.Thread | None = None
        log.info("worker listening on %s with %d modules", self.address, module_count)

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> "WorkerServer":
        """Accept connections on a background thread (for embedding in tests)."""
        self._accept_thread = threading.Thread(target=self.serve_forever,
                                               name=f"worker-{self.address}",
                                               daemon=True)
        self._accept_thread.start()
        return self

    def serve_forever(self) -> None:
        while not self._closing:
            try:
                conn, peer = self._sock.accept()
            except OSError:
                break  # listener closed
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._conns_lock:
                if self._closing:
                    conn.close()
                    break
                self._conns.add(conn)
            threading.Thread(target=self._serve_connection, args=(conn, peer),
                             daemon=True).start()

    def close(self) -> None:
        """Drop the listener and every live connection (abrupt, like a crash)."""
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass
        with self._conns_lock:
            conns = list(self._conns)
            self._conns.clear()
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        for module in self.modules:
            try:
                module.register_write(REG_COMMAND, CMD_RESET)
            except RegisterError:
                pass

    # -- connection handling ----------------------------------------------------

    def _serve_connection(self, conn: socket.socket, peer) -> None:
        send_lock = threading.Lock()
        push_enabled = False

        def send(msg, msg_type=None):
            with send_lock:
                P.write_frame(conn, msg, msg_type)

        try:
            while True:
                try:
                    msg_type, payload = P.read_frame(conn)
                    request = P.decode_request(msg_type, payload)
                except P.ProtocolError as exc:
                    log.warning("dropping %s: %s", peer, exc)
                    try:
                        send(P.Error(exc.code, str(exc)))
                    except OSError:
                        pass
                    break
                try:
                    if isinstance(request, P.Hello):
                        push_enabled = request.push
                        send(P.HelloReply(len(self.modules), push_enabled))
                    elif isinstance(request, P.RegRead):
                        value = self._module(request.module).register_read(request.addr)
                        send(P.RegValue(value))
                    elif isinstance(request, P.RegWrite):
                        self._module(request.module).register_write(
                            request.addr, request.value)
                        send(P.Ack(), P.MSG_REG_WRITE)
                    elif isinstance(request, P.BulkWrite):
                        send(self._bulk_write(request))
                    elif isinstance(request, P.StartJob):
                        self._start_job(request, send if push_enabled else None)
                        send(P.Ack(), P.MSG_START_JOB)
                    elif isinstance(request, P.Poll):
                        send(self._poll(request.module), P.MSG_POLL)
                    else:  # Error frames from a client are log-only
                        log.warning("client error frame from %s: %s", peer, request)
                except RegisterError as exc:
                    send(P.Error(exc.code, str(exc)))
                except P.ProtocolError as exc:
                    send(P.Error(exc.code, str(exc)))
                except Exception as exc:  # keep serving; surface as ERROR
                    log.exception("request failed")
                    send(P.Error(P.ERR_INTERNAL, f"{type(exc).__name__}: {exc}"))
        except (ConnectionError, OSError):
            pass
        finally:
            with self._conns_lock:
                self._conns.discard(conn)
            conn.close()

    # -- request handlers ---------------------------------------------------------

    def _module(self, index: int) -> EvalModule:
        if not 0 <= index < len(self.modules):
            raise P.ProtocolError(f"no module {index}", P.ERR_BAD_MODULE)
        return self.modules[index]

    def _bulk_write(self, req: P.BulkWrite) -> P.BulkAck:
        data = req.data
        was_cached = False
        if req.object_id:
            if data:
                was_cached = self._blobs.put(req.object_id, data)
            else:
                cached = self._blobs.get(req.object_id)
                if cached is None:
                    raise P.ProtocolError(f"object {req.object_id} not cached",
                                          P.ERR_UNKNOWN_OBJECT)
                data, was_cached = cached, True
        if req.module != P.MODULE_NONE:
            module = self._module(req.module)
            with self._module_locks[req.module]:
                module.bulk_write(req.window, req.offset, data)
        return P.BulkAck(was_cached)

    def _start_job(self, req: P.StartJob, push_send) -> None:
        module = self._module(req.module)
        if self.frame_cap_limit is not None and req.frame_cap > self.frame_cap_limit:
            raise P.ProtocolError(
                f"frame cap {req.frame_cap} exceeds worker limit "
                f"{self.frame_cap_limit}", ERR_BAD_VALUE)
        with self._module_locks[req.module]:
            self._active[req.module] = (req.genome_id, req.eval_seed)
            module.register_write(REG_COMMAND, CMD_RESET)
            module.set_genome_id(req.genome_id)
            module.set_eval_seed(req.eval_seed)
            module.set_env_params(req.params)
            module.register_write(REG_GAME_ID, req.game_id)
            module.register_write(REG_FRAME_CAP, req.frame_cap)
            module.register_write(REG_ACTION_COUNT, req.action_count)
            module.register_write(REG_COMMAND, CMD_START)
        if push_send is not None:
            threading.Thread(
                target=self._push_result,
                args=(req.module, module, push_send),
                daemon=True,
            ).start()

    def _take_result(self, index: int, module: EvalModule) -> P.JobResult:
        status = module.status
        try:
            record = module.take_record()
        except Exception as exc:
            genome_id, eval_seed = self._active[index]
            return P.JobResult(module=index, flag=P.FLAG_FAILURE, status=status,
                               genome_id=genome_id, eval_seed=eval_seed,
                               errcode=getattr(exc, "code", P.ERR_INTERNAL),
                               errmsg=f"{type(exc).__name__}: {exc}")
        if record is None:
            return P.JobResult(module=index, flag=P.FLAG_PENDING, status=status)
        return P.JobResult(module=index, flag=P.FLAG_RECORD, status=status,
                           genome_id=record.genome_id, eval_seed=record.eval_seed,
                           score=record.score, frames=record.frames,
                           termination=record.termination)

    def _poll(self, index: int) -> P.JobResult:
        module = self._module(index)
        with self._module_locks[index]:
            if module.status not in _DONE:
                return P.JobResult(module=index, flag=P.FLAG_PENDING,
                                   status=module.status)
            return self._take_result(index, module)

    def _push_result(self, index: int, module: EvalModule, send) -> None:
        module.wait()
        with self._module_locks[index]:
            result = self._take_result(index, module)
        try:
            send(result, P.MSG_RESULT)
        except (ConnectionError, OSError):
            pass  # gateway gone; a future dispatcher will re-run the job


def serve_worker(bind: str, module_count: int = DEFAULT_MODULE_COUNT, *,
                 frame_cap_limit: int | None = None) -> WorkerServer:
    """Bind host:port and return the (not yet serving) worker server."""
    host, sep, port = bind.rpartition(":")
    if not sep:
        raise ValueError(f"bind address must be host:port, got {bind!r}")
    return WorkerServer(host, int(port), module_count,
                        frame_cap_limit=frame_cap_limit)
