"""Console frame preprocessing.

A console frame is a 210x160 array of 7-bit palette indices.  The pipeline
turns a stream of frames into network inputs in four stages, all integer:

1. palette -> luminance  (BT.601 integer weights, round half up)
2. two-frame max pooling (current frame with the previous one)
3. bilinear downscale to 84x84 (pixel-centre alignment, 8.8 fixed-point
   interpolation weights, round to nearest with the usual +half bias)
4. stack of the last four scaled frames, oldest first, quantized to the
   activation format (v/256 at radix 6)

The shipped reference palette is the single source of truth for
palette-derived values such as the distinct-luminance count.
"""

from __future__ import annotations

import struct
from importlib import resources
from pathlib import Path

import numpy as np

from .fixedpoint import ACTIVATION_FORMAT, quantize

__all__ = [
    "FRAME_HEIGHT",
    "FRAME_WIDTH",
    "TARGET_SIZE",
    "STACK_DEPTH",
    "PALETTE_SIZE",
    "FIXTURE_MAGIC",
    "FIXTURE_VERSION",
    "load_palette",
    "default_palette",
    "luma_table",
    "to_luma",
    "pool",
    "BilinearScaler",
    "rescale",
    "stack",
    "to_activations",
    "FramePipeline",
    "fixture_to_bytes",
    "write_frame_fixture",
    "read_frame_fixture",
    "parse_frame_fixture",
]

FRAME_HEIGHT = 210
FRAME_WIDTH = 160
TARGET_SIZE = 84
STACK_DEPTH = 4
PALETTE_SIZE = 128

FIXTURE_MAGIC = b"AFRM"
FIXTURE_VERSION = 1
_FIXTURE_HEADER = struct.Struct("<4sIII")  # magic, version, frame count, reserved
_FRAME_BYTES = FRAME_HEIGHT * FRAME_WIDTH


def load_palette(path: str | Path) -> np.ndarray:
    """Read a palette file: 128 lines of ``RR GG BB`` hex bytes."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected three hex bytes")
        rows.append([int(p, 16) for p in parts])
    if len(rows) != PALETTE_SIZE:
        raise ValueError(f"{path}: expected {PALETTE_SIZE} entries, got {len(rows)}")
    pal = np.array(rows, dtype=np.int64)
    if pal.min() < 0 or pal.max() > 255:
        raise ValueError(f"{path}: colour component out of range")
    return pal.astype(np.uint8)


def default_palette() -> np.ndarray:
    """The reference NTSC palette shipped with the package."""
    with resources.as_file(resources.files("evofarm.data") / "palette_ntsc.txt") as p:
        return load_palette(p)


def luma_table(palette: np.ndarray) -> np.ndarray:
    """BT.601 luminance per palette index, integer round-half-up."""
    pal = palette.astype(np.int64)
    y = (299 * pal[:, 0] + 587 * pal[:, 1] + 114 * pal[:, 2] + 500) // 1000
    return y.astype(np.uint8)


def to_luma(frame: np.ndarray, lut: np.ndarray) -> np.ndarray:
    """Map palette indices to luminance; out-of-palette indices raise."""
    return np.take(lut, frame)  # mode='raise' guards the 7-bit index contract


def pool(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise max of two luminance frames."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.maximum(a, b)


def _axis_taps(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-output source taps and 8.8 blend weights, pixel-centre aligned.

    The source coordinate of output pixel d is (d + 0.5) * src/dst - 0.5,
    computed exactly in integers at 8.8 precision and clamped to the frame.
    """
    lo = np.empty(dst, dtype=np.intp)
    hi = np.empty(dst, dtype=np.intp)
    frac = np.empty(dst, dtype=np.int32)
    limit = (src - 1) << 8
    for d in range(dst):
        num = (2 * d + 1) * src * 128  # position * 256, before the -0.5 shift
        pos = (2 * num + dst) // (2 * dst) - 128  # round-half-up division
        pos = min(max(pos, 0), limit)
        lo[d] = pos >> 8
        hi[d] = min((pos >> 8) + 1, src - 1)
        frac[d] = pos & 0xFF
    return lo, hi, frac


class BilinearScaler:
    """Integer bilinear downscaler with precomputed flat taps and weights.

    The four neighbour gathers use flattened indices and the 8.8 x/y blend
    weights are premultiplied into four 16.16 corner weights, so one frame
    costs four ``take`` gathers and a handful of int32 ufuncs.
    """

    def __init__(
        self,
        src_shape: tuple[int, int] = (FRAME_HEIGHT, FRAME_WIDTH),
        dst_shape: tuple[int, int] = (TARGET_SIZE, TARGET_SIZE),
    ) -> None:
        self.src_shape = src_shape
        self.dst_shape = dst_shape
        y0, y1, fy = _axis_taps(src_shape[0], dst_shape[0])
        x0, x1, fx = _axis_taps(src_shape[1], dst_shape[1])
        w = src_shape[1]
        self._i00 = (y0[:, None] * w + x0[None, :]).ravel()
        self._i01 = (y0[:, None] * w + x1[None, :]).ravel()
        self._i10 = (y1[:, None] * w + x0[None, :]).ravel()
        self._i11 = (y1[:, None] * w + x1[None, :]).ravel()
        wy0, wy1 = (256 - fy)[:, None], fy[:, None]
        wx0, wx1 = (256 - fx)[None, :], fx[None, :]
        self._w00 = (wy0 * wx0).ravel()
        self._w01 = (wy0 * wx1).ravel()
        self._w10 = (wy1 * wx0).ravel()
        self._w11 = (wy1 * wx1).ravel()

    def __call__(self, luma: np.ndarray) -> np.ndarray:
        if luma.shape != self.src_shape:
            raise ValueError(f"expected {self.src_shape} frame, got {luma.shape}")
        f = luma.reshape(-1).astype(np.int32, copy=False)
        acc = f.take(self._i00) * self._w00
        acc += f.take(self._i01) * self._w01
        acc += f.take(self._i10) * self._w10
        acc += f.take(self._i11) * self._w11
        acc += 1 << 15
        acc >>= 16
        return acc.astype(np.uint8).reshape(self.dst_shape)


_default_scaler = BilinearScaler()


def rescale(luma: np.ndarray) -> np.ndarray:
    """Downscale a 210x160 luminance frame to 84x84."""
    return _default_scaler(luma)


def stack(frames: list[np.ndarray] | tuple[np.ndarray, ...]) -> np.ndarray:
    """Stack the last four scaled frames oldest-first into an HWC tensor.

    With fewer than four frames available (episode start) the earliest frame
    is repeated on the left.
    """
    if not frames:
        raise ValueError("stack needs at least one frame")
    window = list(frames[-STACK_DEPTH:])
    while len(window) < STACK_DEPTH:
        window.insert(0, window[0])
    return np.stack(window, axis=-1)


#: Activation raw per grey level: quantize(v/256) at radix 6.
_ACT_LUT = np.array(
    [quantize(v / 256.0, ACTIVATION_FORMAT).raw for v in range(256)], dtype=np.int16
)


def to_activations(stacked: np.ndarray) -> np.ndarray:
    """Quantize stacked grey levels to activation raws (int16)."""
    return _ACT_LUT[stacked]


class FramePipeline:
    """Stateful per-episode pipeline: feed frames, get a stack every fourth.

    ``push`` returns the quantized 84x84x4 input exactly on frames 4, 8, 12,
    ... and None otherwise, so stack k covers console frames 4k-3 .. 4k.
    """

    def __init__(self, palette: np.ndarray, scaler: BilinearScaler | None = None) -> None:
        self._lut = luma_table(palette)
        self._scaler = scaler or _default_scaler
        self.reset()

    def reset(self) -> None:
        self._prev_luma: np.ndarray | None = None
        self._window: list[np.ndarray] = []
        self._count = 0

    def push(self, frame: np.ndarray) -> np.ndarray | None:
        luma = to_luma(frame, self._lut)
        pooled = luma if self._prev_luma is None else pool(self._prev_luma, luma)
        self._prev_luma = luma
        self._window.append(self._scaler(pooled))
        del self._window[:-STACK_DEPTH]
        self._count += 1
        if self._count % STACK_DEPTH == 0:
            return to_activations(stack(self._window))
        return None


def fixture_to_bytes(frames: np.ndarray) -> bytes:
    """Encode frames (N,210,160 uint8 palette indices) as fixture bytes."""
    frames = np.asarray(frames, dtype=np.uint8)
    if frames.ndim != 3 or frames.shape[1:] != (FRAME_HEIGHT, FRAME_WIDTH):
        raise ValueError(f"bad fixture shape {frames.shape}")
    header = _FIXTURE_HEADER.pack(FIXTURE_MAGIC, FIXTURE_VERSION, len(frames), 0)
    return header + frames.tobytes()


def write_frame_fixture(path: str | Path, frames: np.ndarray) -> None:
    """Write frames as a replay fixture file."""
    Path(path).write_bytes(fixture_to_bytes(frames))


def parse_frame_fixture(blob: bytes, origin: str = "<bytes>", *,
                        allow_trailing: bool = False) -> np.ndarray:
    """Decode fixture bytes; truncated or mislabeled input raises ValueError.

    ``allow_trailing`` tolerates extra bytes after the last frame, for
    fixtures embedded in larger buffers that may hold stale data.
    """
    if len(blob) < _FIXTURE_HEADER.size:
        raise ValueError(f"{origin}: truncated header")
    magic, version, count, _ = _FIXTURE_HEADER.unpack_from(blob)
    if magic != FIXTURE_MAGIC:
        raise ValueError(f"{origin}: bad magic {magic!r}")
    if version != FIXTURE_VERSION:
        raise ValueError(f"{origin}: unsupported version {version}")
    body = blob[_FIXTURE_HEADER.size:]
    needed = count * _FRAME_BYTES
    if len(body) != needed and not (allow_trailing and len(body) > needed):
        raise ValueError(f"{origin}: expected {count} frames, payload is {len(body)} bytes")
    return np.frombuffer(body[:needed], dtype=np.uint8).reshape(count, FRAME_HEIGHT, FRAME_WIDTH)


def read_frame_fixture(path: str | Path) -> np.ndarray:
    """Read a replay fixture file."""
    return parse_frame_fixture(Path(path).read_bytes(), origin=str(path))
