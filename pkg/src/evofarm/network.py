"""Quantized convolutional policy network.

The stock network maps an 84x84x4 input to 18 action values through three
valid (unpadded) ReLU convolutions and one inner-product layer, with no
biases anywhere.  Weights are Q16 radix-13, activations Q16 radix-6;
accumulation is exact at radix 19 and every layer output is requantized to
the activation format (round-to-nearest-even, saturating).

Weights live in one flat int16 genome in canonical order: layer-major, then
output channel, input channel, row, column.  The inner-product layer is laid
out as a full-field convolution (its filter covers the whole 7x7x64 input),
which gives the dense weights the same (out, in, row, col) order.

The integer kernels run as float64 matmuls: every product and partial sum in
this network is an integer below 2**48, far inside float64's exact range, so
the results are bit-identical to scalar fixed-point arithmetic while running
at BLAS speed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fixedpoint import (
    ACC_RADIX,
    ACTIVATION_FORMAT,
    WEIGHT_FORMAT,
    QFormat,
    requantize_array,
)

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "Genome",
    "default_spec",
    "param_shapes",
    "split_weights",
    "QuantizedNet",
    "forward",
    "forward_float",
    "deviation_bound",
    "save_genome",
    "load_genome",
    "GENOME_MAGIC",
    "GENOME_VERSION",
]

GENOME_MAGIC = b"GNOM"
GENOME_VERSION = 1
_GENOME_HEADER = struct.Struct("<4sIII")  # magic, version, param count, reserved


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a valid convolution or a full-field inner product."""

    kind: str  # "conv" | "dense"
    in_shape: tuple[int, int, int]  # (H, W, C)
    filter_shape: tuple[int, int]  # (kh, kw)
    stride: int
    out_channels: int
    relu: bool
    cpf: int = 1  # channels-per-frame tiling hint; numerically inert
    kpf: int = 1  # kernels-per-frame tiling hint; numerically inert

    def __post_init__(self) -> None:
        h, w, _ = self.in_shape
        kh, kw = self.filter_shape
        if self.kind not in ("conv", "dense"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (kh, kw) != (h, w):
            raise ValueError("dense layers must cover their whole input")
        if (h - kh) % self.stride or (w - kw) % self.stride:
            raise ValueError(f"filter {self.filter_shape}/stride {self.stride} "
                             f"does not tile input {self.in_shape}")

    @property
    def out_shape(self) -> tuple[int, int, int]:
        h, w, _ = self.in_shape
        kh, kw = self.filter_shape
        return ((h - kh) // self.stride + 1, (w - kw) // self.stride + 1, self.out_channels)

    @property
    def weight_count(self) -> int:
        kh, kw = self.filter_shape
        return self.out_channels * self.in_shape[2] * kh * kw

    @property
    def fan_in(self) -> int:
        kh, kw = self.filter_shape
        return kh * kw * self.in_shape[2]

    @property
    def fan_out(self) -> int:
        # For the inner product the fan-out is just its unit count.
        if self.kind == "dense":
            return self.out_channels
        kh, kw = self.filter_shape
        return kh * kw * self.out_channels


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self) -> None:
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_shape != nxt.in_shape:
                raise ValueError(f"layer chain mismatch: {prev.out_shape} -> {nxt.in_shape}")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.layers[0].in_shape

    @property
    def output_count(self) -> int:
        return self.layers[-1].out_channels

    @property
    def total_params(self) -> int:
        return sum(l.weight_count for l in self.layers)


def default_spec() -> NetworkSpec:
    """The stock 84x84x4 -> 18 network."""
    return NetworkSpec(
        layers=(
            LayerSpec("conv", (84, 84, 4), (8, 8), 4, 32, relu=True, cpf=4, kpf=32),
            LayerSpec("conv", (20, 20, 32), (4, 4), 2, 64, relu=True, cpf=32, kpf=4),
            LayerSpec("conv", (9, 9, 64), (3, 3), 1, 64, relu=True, cpf=4, kpf=32),
            LayerSpec("dense", (7, 7, 64), (7, 7), 1, 18, relu=False, cpf=4, kpf=1),
        )
    )


def param_shapes(spec: NetworkSpec) -> list[tuple[int, int, int, int]]:
    """Per-layer weight tensor shapes in canonical (out, in, kh, kw) order."""
    return [(l.out_channels, l.in_shape[2], *l.filter_shape) for l in spec.layers]


@dataclass(frozen=True, eq=False)
class Genome:
    """A flat int16 weight vector plus identity and mutation history.

    Compared by identity (the weights array makes value equality a trap);
    ``lineage`` records (parent id, mutation seed) pairs from oldest to
    newest; initialisation counts as parent id 0 with the init seed.
    """

    weights: np.ndarray
    genome_id: int
    lineage: tuple[tuple[int, int], ...] = ()
    fmt: QFormat = WEIGHT_FORMAT

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.int16)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size


def split_weights(spec: NetworkSpec, flat: np.ndarray) -> list[np.ndarray]:
    """Slice a flat weight vector into per-layer (OC, IC, KH, KW) tensors."""
    flat = np.asarray(flat)
    if flat.size != spec.total_params:
        raise ValueError(f"genome has {flat.size} weights, spec wants {spec.total_params}")
    out, cursor = [], 0
    for shape in param_shapes(spec):
        n = int(np.prod(shape))
        out.append(flat[cursor:cursor + n].reshape(shape))
        cursor += n
    return out


def _patches(x: np.ndarray, layer: LayerSpec) -> tuple[np.ndarray, tuple[int, int]]:
    """im2col: strided (kh, kw) windows flattened to (H'*W', C*kh*kw) rows.

    The feature order matches the canonical weight order (in-channel major,
    then row, then column).
    """
    kh, kw = layer.filter_shape
    s = layer.stride
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    win = win[::s, ::s]  # (H', W', C, kh, kw)
    oh, ow = win.shape[:2]
    return win.reshape(oh * ow, -1), (oh, ow)


def _layer_matmul(patches: np.ndarray, wmat: np.ndarray, layer: LayerSpec,
                  tiled: bool) -> np.ndarray:
    if not tiled:
        return patches @ wmat
    # Tile input channels by cpf and output units by kpf, mirroring the
    # frame-at-a-time kernel schedule; exact integer adds keep this inert.
    kh, kw = layer.filter_shape
    fstep = max(layer.cpf, 1) * kh * kw
    kstep = max(layer.kpf, 1)
    out = np.zeros((patches.shape[0], wmat.shape[1]))
    for k0 in range(0, wmat.shape[1], kstep):
        for f0 in range(0, patches.shape[1], fstep):
            out[:, k0:k0 + kstep] += patches[:, f0:f0 + fstep] @ wmat[f0:f0 + fstep, k0:k0 + kstep]
    return out


class QuantizedNet:
    """Fixed-point inference engine for one network spec."""

    def __init__(self, spec: NetworkSpec | None = None, *, tiled: bool = False) -> None:
        self.spec = spec or default_spec()
        self.tiled = tiled
        self._wmats: list[np.ndarray] | None = None

    def load(self, genome: Genome) -> "QuantizedNet":
        """Reformat genome weights for the matmul kernels (exact float64)."""
        layers = split_weights(self.spec, genome.weights)
        self._wmats = [
            w.reshape(l.out_channels, -1).T.astype(np.float64)
            for w, l in zip(layers, self.spec.layers)
        ]
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Run quantized inference on activation raws (HWC int16)."""
        if self._wmats is None:
            raise RuntimeError("no genome loaded")
        if x.shape != self.spec.input_shape:
            raise ValueError(f"expected input {self.spec.input_shape}, got {x.shape}")
        act = np.asarray(x, dtype=np.float64)
        for layer, wmat in zip(self.spec.layers, self._wmats):
            patches, (oh, ow) = _patches(act, layer)
            acc = _layer_matmul(patches, wmat, layer, self.tiled)
            raw = requantize_array(acc, ACC_RADIX, ACTIVATION_FORMAT,
                                   relu=layer.relu, raw_dtype=np.float64)
            act = raw.reshape(oh, ow, layer.out_channels)
        return act.reshape(-1).astype(np.int16)


def forward(genome: Genome, x: np.ndarray, spec: NetworkSpec | None = None) -> np.ndarray:
    """One-shot quantized forward pass; returns 18 activation raws."""
    return QuantizedNet(spec).load(genome).forward(x)


def forward_float(weights: np.ndarray, x: np.ndarray,
                  spec: NetworkSpec | None = None) -> np.ndarray:
    """Reference real-valued forward pass (float64 end to end).

    ``weights`` and ``x`` are real vectors, typically the dequantized genome
    and input; no quantization happens anywhere inside.
    """
    spec = spec or default_spec()
    layers = split_weights(spec, np.asarray(weights, dtype=np.float64))
    act = np.asarray(x, dtype=np.float64)
    if act.shape != spec.input_shape:
        raise ValueError(f"expected input {spec.input_shape}, got {act.shape}")
    for layer, w in zip(spec.layers, layers):
        patches, (oh, ow) = _patches(act, layer)
        out = patches @ w.reshape(layer.out_channels, -1).T
        if layer.relu:
            out = np.maximum(out, 0.0)
        act = out.reshape(oh, ow, layer.out_channels)
    return act.reshape(-1)


def deviation_bound(weights: np.ndarray, spec: NetworkSpec | None = None) -> float:
    """Worst-case |fixed - float| bound on any output, from quantization steps.

    Each requantization contributes at most half an activation step; ReLU is
    1-Lipschitz, so a layer amplifies incoming error by at most its largest
    row L1 norm.  Valid as long as no interior activation saturates.
    """
    spec = spec or default_spec()
    half_step = 0.5 / ACTIVATION_FORMAT.scale
    bound = 0.0
    for layer, w in zip(spec.layers, split_weights(spec, np.asarray(weights, float))):
        row_l1 = np.abs(w.reshape(layer.out_channels, -1)).sum(axis=1).max()
        bound = row_l1 * bound + half_step
    return float(bound)


def save_genome(path: str | Path, genome: Genome) -> None:
    """Write a genome file: 16-byte header then little-endian int16 weights."""
    with open(path, "wb") as fh:
        fh.write(_GENOME_HEADER.pack(GENOME_MAGIC, GENOME_VERSION, len(genome), 0))
        fh.write(genome.weights.astype("<i2").tobytes())


def load_genome(path: str | Path, genome_id: int = 0) -> Genome:
    blob = Path(path).read_bytes()
    if len(blob) < _GENOME_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, count, _ = _GENOME_HEADER.unpack_from(blob)
    if magic != GENOME_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != GENOME_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = blob[_GENOME_HEADER.size:]
    if len(body) != 2 * count:
        raise ValueError(f"{path}: expected {count} weights, payload is {len(body)} bytes")
    return Genome(np.frombuffer(body, dtype="<i2"), genome_id=genome_id)
