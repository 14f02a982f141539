"""Wire protocol for remote evaluation modules.

Every frame is a fixed header (magic ``INCF``, u8 version, u8 message type,
u32 payload length, all little-endian) followed by the payload.  Requests
are answered with a frame of the same type (or ERROR); RESULT frames are
only ever unsolicited pushes from a worker whose connection negotiated push
mode.  Register and window offsets are exactly the in-process module's, so
the remote interface is a thin RPC layer over the same state machine.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Mapping

__all__ = [
    "PROTOCOL_MAGIC", "PROTOCOL_VERSION", "MAX_PAYLOAD",
    "MSG_HELLO", "MSG_REG_READ", "MSG_REG_WRITE", "MSG_BULK_WRITE",
    "MSG_START_JOB", "MSG_POLL", "MSG_RESULT", "MSG_ERROR",
    "MODULE_NONE", "FLAG_PENDING", "FLAG_RECORD", "FLAG_FAILURE",
    "ERR_PROTOCOL", "ERR_UNKNOWN_OBJECT", "ERR_BAD_MODULE", "ERR_INTERNAL",
    "ProtocolError",
    "Hello", "HelloReply", "RegRead", "RegValue", "RegWrite", "Ack",
    "BulkWrite", "BulkAck", "StartJob", "Poll", "JobResult", "Error",
    "encode_frame", "decode_request", "decode_reply",
    "read_exact", "read_frame", "write_frame",
]

PROTOCOL_MAGIC = b"INCF"
PROTOCOL_VERSION = 1
MAX_PAYLOAD = 4 << 20  # genomes are ~256 KiB, fixtures capped by the ROM window

_HEADER = struct.Struct("<4sBBI")

MSG_HELLO = 1
MSG_REG_READ = 2
MSG_REG_WRITE = 3
MSG_BULK_WRITE = 4
MSG_START_JOB = 5
MSG_POLL = 6
MSG_RESULT = 7
MSG_ERROR = 8

MODULE_NONE = 0xFF  # BULK_WRITE target meaning "cache only, no window write"

# JobResult.flag
FLAG_PENDING = 0  # episode still running (poll replies only)
FLAG_RECORD = 1
FLAG_FAILURE = 2

# protocol-level error codes; worker-side RegisterErrors keep their own codes
ERR_PROTOCOL = 100
ERR_UNKNOWN_OBJECT = 101
ERR_BAD_MODULE = 102
ERR_INTERNAL = 103

_TERMINATION_CODE = {"dead": 0, "timeout": 1, "stopped": 2, "": 255}
_CODE_TERMINATION = {v: k for k, v in _TERMINATION_CODE.items()}


class ProtocolError(RuntimeError):
    """Malformed frame or payload."""

    def __init__(self, message: str, code: int = ERR_PROTOCOL) -> None:
        super().__init__(message)
        self.code = code


def _need(payload: bytes, size: int, what: str) -> None:
    if len(payload) < size:
        raise ProtocolError(f"{what}: payload too short ({len(payload)} < {size})")


@dataclass(frozen=True)
class Hello:
    """Connection handshake; the client asks for push-mode results."""

    push: bool = False

    TYPE = MSG_HELLO

    def encode(self) -> bytes:
        return struct.pack("<B", 1 if self.push else 0)

    @classmethod
    def decode(cls, payload: bytes) -> "Hello":
        _need(payload, 1, "HELLO")
        return cls(push=bool(payload[0]))


@dataclass(frozen=True)
class HelloReply:
    module_count: int
    push_enabled: bool

    TYPE = MSG_HELLO

    def encode(self) -> bytes:
        return struct.pack("<BB", self.module_count, 1 if self.push_enabled else 0)

    @classmethod
    def decode(cls, payload: bytes) -> "HelloReply":
        _need(payload, 2, "HELLO reply")
        return cls(module_count=payload[0], push_enabled=bool(payload[1]))


@dataclass(frozen=True)
class RegRead:
    module: int
    addr: int

    TYPE = MSG_REG_READ
    _S = struct.Struct("<BI")

    def encode(self) -> bytes:
        return self._S.pack(self.module, self.addr)

    @classmethod
    def decode(cls, payload: bytes) -> "RegRead":
        _need(payload, cls._S.size, "REG_READ")
        return cls(*cls._S.unpack_from(payload))


@dataclass(frozen=True)
class RegValue:
    value: int

    TYPE = MSG_REG_READ

    def encode(self) -> bytes:
        return struct.pack("<Q", self.value & 0xFFFFFFFFFFFFFFFF)

    @classmethod
    def decode(cls, payload: bytes) -> "RegValue":
        _need(payload, 8, "REG_READ reply")
        return cls(value=struct.unpack_from("<Q", payload)[0])


@dataclass(frozen=True)
class RegWrite:
    module: int
    addr: int
    value: int

    TYPE = MSG_REG_WRITE
    _S = struct.Struct("<BIQ")

    def encode(self) -> bytes:
        return self._S.pack(self.module, self.addr, self.value & 0xFFFFFFFFFFFFFFFF)

    @classmethod
    def decode(cls, payload: bytes) -> "RegWrite":
        _need(payload, cls._S.size, "REG_WRITE")
        return cls(*cls._S.unpack_from(payload))


@dataclass(frozen=True)
class Ack:
    """Empty acknowledgement (REG_WRITE and START_JOB replies)."""

    TYPE = None  # reply type mirrors the request

    def encode(self) -> bytes:
        return b""

    @classmethod
    def decode(cls, payload: bytes) -> "Ack":
        return cls()


@dataclass(frozen=True)
class BulkWrite:
    """Window write, optionally through the worker's object cache.

    With ``object_id`` set and ``data`` empty, the worker copies its cached
    bytes for that id (ERROR ``ERR_UNKNOWN_OBJECT`` if evicted).  With data,
    the bytes are cached under the id and written.  ``module`` MODULE_NONE
    caches without touching any window.
    """

    module: int
    window: int
    object_id: int
    offset: int
    data: bytes = b""

    TYPE = MSG_BULK_WRITE
    _S = struct.Struct("<BBQI")

    def encode(self) -> bytes:
        return self._S.pack(self.module, self.window, self.object_id,
                            self.offset) + self.data

    @classmethod
    def decode(cls, payload: bytes) -> "BulkWrite":
        _need(payload, cls._S.size, "BULK_WRITE")
        module, window, object_id, offset = cls._S.unpack_from(payload)
        return cls(module, window, object_id, offset, bytes(payload[cls._S.size:]))


@dataclass(frozen=True)
class BulkAck:
    was_cached: bool

    TYPE = MSG_BULK_WRITE

    def encode(self) -> bytes:
        return struct.pack("<B", 1 if self.was_cached else 0)

    @classmethod
    def decode(cls, payload: bytes) -> "BulkAck":
        _need(payload, 1, "BULK_WRITE reply")
        return cls(was_cached=bool(payload[0]))


@dataclass(frozen=True)
class StartJob:
    """Configure a module from cached/window state and START the episode."""

    module: int
    genome_id: int
    eval_seed: int
    game_id: int
    action_count: int
    frame_cap: int
    params: Mapping[str, Any] = field(default_factory=dict)

    TYPE = MSG_START_JOB
    _S = struct.Struct("<BQQIII")

    def encode(self) -> bytes:
        blob = json.dumps(dict(self.params), sort_keys=True).encode("utf-8")
        return self._S.pack(self.module, self.genome_id, self.eval_seed,
                            self.game_id, self.action_count, self.frame_cap) + blob

    @classmethod
    def decode(cls, payload: bytes) -> "StartJob":
        _need(payload, cls._S.size, "START_JOB")
        module, genome_id, eval_seed, game_id, action_count, frame_cap = \
            cls._S.unpack_from(payload)
        blob = payload[cls._S.size:]
        try:
            params = json.loads(blob.decode("utf-8")) if blob else {}
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"START_JOB: bad params blob: {exc}")
        if not isinstance(params, dict):
            raise ProtocolError("START_JOB: params blob is not an object")
        return cls(module, genome_id, eval_seed, game_id, action_count,
                   frame_cap, params)


@dataclass(frozen=True)
class Poll:
    module: int

    TYPE = MSG_POLL

    def encode(self) -> bytes:
        return struct.pack("<B", self.module)

    @classmethod
    def decode(cls, payload: bytes) -> "Poll":
        _need(payload, 1, "POLL")
        return cls(module=payload[0])


@dataclass(frozen=True)
class JobResult:
    """Poll reply or pushed completion; one fitness record or one failure."""

    module: int
    flag: int
    status: int
    genome_id: int = 0
    eval_seed: int = 0
    score: int = 0
    frames: int = 0
    termination: str = ""
    errcode: int = 0
    errmsg: str = ""

    TYPE = MSG_RESULT
    _S = struct.Struct("<BBBQQqIBI")

    def encode(self) -> bytes:
        return self._S.pack(self.module, self.flag, self.status, self.genome_id,
                            self.eval_seed, self.score, self.frames,
                            _TERMINATION_CODE[self.termination],
                            self.errcode) + self.errmsg.encode("utf-8")

    @classmethod
    def decode(cls, payload: bytes) -> "JobResult":
        _need(payload, cls._S.size, "RESULT")
        (module, flag, status, genome_id, eval_seed, score, frames,
         term, errcode) = cls._S.unpack_from(payload)
        if term not in _CODE_TERMINATION:
            raise ProtocolError(f"RESULT: unknown termination code {term}")
        return cls(module, flag, status, genome_id, eval_seed, score, frames,
                   _CODE_TERMINATION[term], errcode,
                   payload[cls._S.size:].decode("utf-8", errors="replace"))


@dataclass(frozen=True)
class Error:
    code: int
    message: str = ""

    TYPE = MSG_ERROR

    def encode(self) -> bytes:
        return struct.pack("<I", self.code) + self.message.encode("utf-8")

    @classmethod
    def decode(cls, payload: bytes) -> "Error":
        _need(payload, 4, "ERROR")
        return cls(code=struct.unpack_from("<I", payload)[0],
                   message=payload[4:].decode("utf-8", errors="replace"))


_REQUEST_TYPES = {
    MSG_HELLO: Hello,
    MSG_REG_READ: RegRead,
    MSG_REG_WRITE: RegWrite,
    MSG_BULK_WRITE: BulkWrite,
    MSG_START_JOB: StartJob,
    MSG_POLL: Poll,
    MSG_ERROR: Error,
}

_REPLY_TYPES = {
    MSG_HELLO: HelloReply,
    MSG_REG_READ: RegValue,
    MSG_REG_WRITE: Ack,
    MSG_BULK_WRITE: BulkAck,
    MSG_START_JOB: Ack,
    MSG_POLL: JobResult,
    MSG_RESULT: JobResult,
    MSG_ERROR: Error,
}


def encode_frame(msg, msg_type: int | None = None) -> bytes:
    """Serialize a message (header + payload); type defaults to msg.TYPE."""
    payload = msg.encode()
    mtype = msg.TYPE if msg_type is None else msg_type
    if mtype is None:
        raise ProtocolError(f"{type(msg).__name__} needs an explicit frame type")
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload too large ({len(payload)} bytes)")
    return _HEADER.pack(PROTOCOL_MAGIC, PROTOCOL_VERSION, mtype, len(payload)) + payload


def decode_request(msg_type: int, payload: bytes):
    cls = _REQUEST_TYPES.get(msg_type)
    if cls is None:
        raise ProtocolError(f"unknown request type {msg_type}")
    return cls.decode(payload)


def decode_reply(msg_type: int, payload: bytes):
    cls = _REPLY_TYPES.get(msg_type)
    if cls is None:
        raise ProtocolError(f"unknown reply type {msg_type}")
    return cls.decode(payload)


def read_exact(sock, size: int) -> bytes:
    """Read exactly size bytes; ConnectionError on EOF mid-frame."""
    buf = bytearray()
    while len(buf) < size:
        chunk = sock.recv(size - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock) -> tuple[int, bytes]:
    """Read one frame; returns (msg type, payload).  ProtocolError on garbage."""
    header = read_exact(sock, _HEADER.size)
    magic, version, msg_type, length = _HEADER.unpack(header)
    if magic != PROTOCOL_MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"oversized payload ({length} bytes)")
    payload = read_exact(sock, length) if length else b""
    return msg_type, payload


def write_frame(sock, msg, msg_type: int | None = None) -> int:
    """Send one message; returns the byte count written."""
    frame = encode_frame(msg, msg_type)
    sock.sendall(frame)
    return len(frame)
