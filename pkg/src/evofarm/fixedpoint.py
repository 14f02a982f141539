"""Signed Q-format fixed-point arithmetic.

All values are plain integers holding two's-complement raws; a QFormat pins
the total bit width and the radix (number of fractional bits).  Rounding is
round-to-nearest-even everywhere and out-of-range results saturate -- they
never wrap.  Scalar ops are the canonical semantics; the ``*_array`` helpers
are vectorised twins used by the inference kernels and are required to match
the scalar ops bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QFormat",
    "QValue",
    "Accumulator",
    "WEIGHT_FORMAT",
    "ACTIVATION_FORMAT",
    "ACC_RADIX",
    "ACC_BITS",
    "quantize",
    "dequantize",
    "mac",
    "requantize",
    "requantize_relu",
    "rne_shift",
    "quantize_array",
    "requantize_array",
]


@dataclass(frozen=True)
class QFormat:
    """Total bit width (including sign) and radix point position."""

    bit_width: int
    radix: int

    def __post_init__(self) -> None:
        if not 1 < self.bit_width <= 32:
            raise ValueError(f"bit_width out of range: {self.bit_width}")
        if not 0 <= self.radix < self.bit_width:
            raise ValueError(f"radix out of range: {self.radix}")

    @property
    def scale(self) -> int:
        return 1 << self.radix

    @property
    def raw_min(self) -> int:
        return -(1 << (self.bit_width - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.bit_width - 1)) - 1


#: Network weights: Q16 with 13 fractional bits, range [-4, 4).
WEIGHT_FORMAT = QFormat(16, 13)
#: Layer activations: Q16 with 6 fractional bits, range [-512, 512).
ACTIVATION_FORMAT = QFormat(16, 6)
#: Products of weight and activation raws live at radix 13 + 6.
ACC_RADIX = WEIGHT_FORMAT.radix + ACTIVATION_FORMAT.radix
#: Usable accumulator width; every dot product in the stock network fits.
ACC_BITS = 48


@dataclass(frozen=True)
class QValue:
    raw: int
    fmt: QFormat

    def __post_init__(self) -> None:
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise ValueError(f"raw {self.raw} outside {self.fmt}")

    @property
    def real(self) -> float:
        return self.raw / self.fmt.scale


@dataclass(frozen=True)
class Accumulator:
    raw: int = 0
    radix: int = ACC_RADIX


def rne_shift(value: int, shift: int) -> int:
    """Arithmetic right shift with round-to-nearest, ties to even."""
    if shift == 0:
        return value
    floor = value >> shift
    rem = value - (floor << shift)
    half = 1 << (shift - 1)
    if rem > half or (rem == half and floor & 1):
        return floor + 1
    return floor


def _saturate(raw: int, fmt: QFormat) -> int:
    if raw > fmt.raw_max:
        return fmt.raw_max
    if raw < fmt.raw_min:
        return fmt.raw_min
    return raw


def quantize(x: float, fmt: QFormat) -> QValue:
    """Round a real value to the nearest representable raw, saturating."""
    # round() on a float is round-half-even, matching the hardware rule.
    return QValue(_saturate(round(x * fmt.scale), fmt), fmt)


def dequantize(q: QValue) -> float:
    return q.raw / q.fmt.scale


def mac(acc: Accumulator, w: QValue, a: QValue) -> Accumulator:
    """Accumulate one weight x activation product at full precision."""
    if w.fmt.radix + a.fmt.radix != acc.radix:
        raise ValueError(
            f"radix mismatch: {w.fmt.radix}+{a.fmt.radix} != {acc.radix}"
        )
    raw = acc.raw + w.raw * a.raw
    assert -(1 << (ACC_BITS - 1)) <= raw < 1 << (ACC_BITS - 1), "accumulator overflow"
    return Accumulator(raw, acc.radix)


def requantize(acc: Accumulator, fmt: QFormat) -> QValue:
    """Narrow an accumulator to an output format (no activation)."""
    if acc.radix < fmt.radix:
        raise ValueError("cannot requantize to a finer radix")
    return QValue(_saturate(rne_shift(acc.raw, acc.radix - fmt.radix), fmt), fmt)


def requantize_relu(acc: Accumulator, fmt: QFormat) -> QValue:
    """ReLU then narrow: negative accumulators clamp to zero first."""
    if acc.raw < 0:
        return QValue(0, fmt)
    return requantize(acc, fmt)


# --- vectorised twins -------------------------------------------------------
#
# np.rint rounds half to even, and float64 holds every integer this pipeline
# can produce (|acc| < 2**48 << 2**53) exactly, so these match the scalar ops
# bit for bit.


def quantize_array(x: np.ndarray, fmt: QFormat) -> np.ndarray:
    """Vectorised quantize; returns int16 raws for 16-bit formats."""
    raw = np.rint(np.asarray(x, dtype=np.float64) * fmt.scale)
    raw = np.clip(raw, fmt.raw_min, fmt.raw_max)
    return raw.astype(np.int16 if fmt.bit_width <= 16 else np.int64)


def requantize_array(acc: np.ndarray, acc_radix: int, fmt: QFormat, *, relu: bool,
                     raw_dtype: type = np.int16) -> np.ndarray:
    """Vectorised requantize of exact integer accumulators (any float/int dtype).

    ``raw_dtype=np.float64`` skips the integer cast for callers chaining into
    another exact float64 stage; the values are identical either way.
    """
    acc = np.asarray(acc, dtype=np.float64)
    if relu:
        acc = np.maximum(acc, 0.0)
    out = np.rint(acc * 2.0 ** (fmt.radix - acc_radix))
    out = np.clip(out, fmt.raw_min, fmt.raw_max)
    return out if raw_dtype is np.float64 else out.astype(raw_dtype)
