"""Fixed-point layer engine.

``conv_forward`` walks output rows in groups of K and, for every group, runs
the weight-stationary nest mm -> cc -> k -> m -> c -> w -> r -> s over a
line-buffer window.  Products of channels with different fraction widths are
left-shifted onto the widest fraction, accumulated in 32-bit partial sums,
biased, passed through the activation, right-shifted (floor) per output
channel and saturated to the output width.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import LayerKind, LayerSpec, QuantFormat
from . import kernels

__all__ = [
    "QuantTensor",
    "EngineConfig",
    "EngineError",
    "ShapeError",
    "AccumulatorOverflowError",
    "BufferUnderflowError",
    "INT32_MIN",
    "INT32_MAX",
    "wrap32",
    "align_products",
    "requantize",
    "requantize_array",
    "LineBuffer",
    "psum_fraction_bits",
    "flatten_for_fc",
    "conv_forward",
    "pool_forward",
    "layer_forward",
]

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


class EngineError(ValueError):
    pass


class ShapeError(EngineError):
    pass


class AccumulatorOverflowError(EngineError, OverflowError):
    def __init__(self, message: str, position: tuple[int, ...] | None = None):
        super().__init__(message)
        self.position = position


class BufferUnderflowError(EngineError):
    pass


def wrap32(x):
    """Two's-complement wrap to 32 bits (works on ints and int64 arrays)."""
    return ((x + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)


@dataclass(frozen=True)
class QuantTensor:
    """Integer tensor in a per-channel fixed-point format.

    Activations are (C, H, W) with one fraction width per channel.  Weights are
    (M, C, R, S) with one fraction width per output channel.
    """

    values: np.ndarray
    fmt: QuantFormat

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.dtype.kind not in "iu":
            if not np.array_equal(values, np.round(values)):
                raise EngineError("tensor values must be integers")
        values = values.astype(np.int64)
        object.__setattr__(self, "values", values)
        if values.ndim < 1:
            raise ShapeError("tensor needs at least one dimension")
        if len(self.fmt.fraction_bits) != values.shape[0]:
            raise ShapeError(f"format has {len(self.fmt.fraction_bits)} channel fractions, "
                             f"tensor has {values.shape[0]} channels")
        if values.size and (values.min() < self.fmt.lo or values.max() > self.fmt.hi):
            raise EngineError(f"values outside the {self.fmt.total_bits}-bit range "
                              f"[{self.fmt.lo}, {self.fmt.hi}]")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def bits(self) -> int:
        return self.fmt.total_bits

    def to_real(self) -> np.ndarray:
        scale = np.asarray([2.0 ** -f for f in self.fmt.fraction_bits])
        return self.values * scale.reshape((-1,) + (1,) * (self.values.ndim - 1))

    @classmethod
    def zeros(cls, dims: tuple[int, ...], bits: int, fraction_bits: int = 0) -> "QuantTensor":
        fmt = QuantFormat.uniform(bits, dims[0], fraction_bits)
        return cls(np.zeros(dims, dtype=np.int64), fmt)


@dataclass(frozen=True)
class EngineConfig:
    """Per-layer engine settings.

    ``shifts`` and ``bias`` hold one entry per output channel; ``bias`` is an
    integer with ``bias_fraction_bits`` fraction bits and is shifted up to the
    partial-sum fraction before it is added.
    """

    c_par: int = 1
    m_par: int = 1
    k_par: int = 1
    shifts: tuple[int, ...] = ()
    bias: tuple[int, ...] = ()
    bias_fraction_bits: tuple[int, ...] | None = None
    activation: str = "relu"
    debug: bool = False

    def __post_init__(self):
        for name in ("c_par", "m_par", "k_par"):
            if getattr(self, name) < 1:
                raise EngineError(f"{name} must be >= 1")
        object.__setattr__(self, "shifts", tuple(int(s) for s in self.shifts))
        object.__setattr__(self, "bias", tuple(int(b) for b in self.bias))
        if any(s < 0 for s in self.shifts):
            raise EngineError("shift bits must be >= 0")
        if self.activation not in ("relu", "identity"):
            raise EngineError(f"activation must be 'relu' or 'identity', got {self.activation!r}")
        if self.bias_fraction_bits is not None:
            object.__setattr__(self, "bias_fraction_bits",
                               tuple(int(f) for f in self.bias_fraction_bits))

    def channel_shifts(self, m: int) -> np.ndarray:
        return _per_channel(self.shifts, m, "shifts")

    def channel_bias(self, m: int) -> np.ndarray:
        return _per_channel(self.bias, m, "bias")


def _per_channel(values: tuple[int, ...], m: int, name: str) -> np.ndarray:
    if not values:
        return np.zeros(m, dtype=np.int64)
    if len(values) == 1:
        return np.full(m, values[0], dtype=np.int64)
    if len(values) != m:
        raise ShapeError(f"{name} has {len(values)} entries for {m} output channels")
    return np.asarray(values, dtype=np.int64)


# ---------------------------------------------------------------------------
# arithmetic primitives

def align_products(products, fraction_bits) -> list[int]:
    """Shift every product onto the widest fraction among ``fraction_bits``.

    ``products[i]`` carries ``fraction_bits[i]`` fraction bits.  The result
    holds 32-bit addends that all share ``max(fraction_bits)``.
    """
    if isinstance(fraction_bits, QuantFormat):
        fraction_bits = fraction_bits.fraction_bits
    products = [int(p) for p in products]
    fraction_bits = [int(f) for f in fraction_bits]
    if len(products) != len(fraction_bits):
        raise ShapeError(f"{len(products)} products but {len(fraction_bits)} formats")
    if not products:
        return []
    top = max(fraction_bits)
    out = []
    for i, (p, f) in enumerate(zip(products, fraction_bits)):
        aligned = p << (top - f)
        if not INT32_MIN <= aligned <= INT32_MAX:
            raise AccumulatorOverflowError(
                f"product {i} ({p}) shifted left {top - f} leaves the 32-bit range", (i,))
        out.append(aligned)
    return out


def requantize(psum: int, shift: int, out_bits: int) -> int:
    """Arithmetic right shift (toward minus infinity), then saturate."""
    if shift < 0:
        raise EngineError("shift must be >= 0")
    if out_bits not in (8, 16):
        raise EngineError(f"out_bits must be 8 or 16, got {out_bits}")
    value = int(psum) >> shift
    lo, hi = -(1 << (out_bits - 1)), (1 << (out_bits - 1)) - 1
    return min(max(value, lo), hi)


def requantize_array(psum: np.ndarray, shifts: np.ndarray, out_bits: int,
                     activation: str = "relu") -> np.ndarray:
    """Vectorized ``requantize`` over (M, ...) partial sums with per-channel shifts."""
    psum = np.asarray(psum, dtype=np.int64)
    shifts = np.asarray(shifts, dtype=np.int64).reshape((-1,) + (1,) * (psum.ndim - 1))
    if activation == "relu":
        psum = np.maximum(psum, 0)
    lo, hi = -(1 << (out_bits - 1)), (1 << (out_bits - 1)) - 1
    return np.clip(psum >> shifts, lo, hi)


def psum_fraction_bits(act_fmt: QuantFormat, weight_fmt: QuantFormat) -> np.ndarray:
    """Fraction bits of each output channel's partial sum."""
    return max(act_fmt.fraction_bits) + np.asarray(weight_fmt.fraction_bits, dtype=np.int64)


# ---------------------------------------------------------------------------
# line buffer

class LineBuffer:
    """Rows of one (C, H, W) feature map as a stage sees them.

    Rows arrive with ``push``; ``window`` assembles the zero-padded input rows
    for a block of output rows.  Rows outside the frame read as zeros, and
    asking for a real row that has not arrived raises BufferUnderflowError.
    """

    def __init__(self, channels: int, height: int, width: int, pad: int = 0,
                 padded_width: int | None = None):
        self.channels, self.height, self.width, self.pad = channels, height, width, pad
        self.padded_width = max(width + 2 * pad, padded_width or 0)
        self._rows: dict[int, np.ndarray] = {}
        self.delivered = 0

    @classmethod
    def from_tensor(cls, values: np.ndarray, pad: int = 0,
                    padded_width: int | None = None) -> "LineBuffer":
        c, h, w = values.shape
        buf = cls(c, h, w, pad, padded_width)
        for y in range(h):
            buf.push(values[:, y, :])
        return buf

    def push(self, row: np.ndarray) -> None:
        if self.delivered >= self.height:
            raise EngineError("frame already complete")
        row = np.asarray(row, dtype=np.int64)
        if row.shape != (self.channels, self.width):
            raise ShapeError(f"row shape {row.shape}, expected {(self.channels, self.width)}")
        self._rows[self.delivered] = row
        self.delivered += 1

    def release(self, below: int) -> None:
        """Drop rows with index < ``below``; they will not be read again."""
        for y in [y for y in self._rows if y < below]:
            del self._rows[y]

    def span(self, h: int, k: int, r: int, g: int) -> range:
        """Input row indices (may be negative or >= H) read by output rows [h, h+k)."""
        first = h * g - self.pad
        return range(first, first + r + g * (k - 1))

    def touched_rows(self, h: int, k: int, r: int, g: int) -> set[int]:
        return {y for y in self.span(h, k, r, g) if 0 <= y < self.height}

    def window(self, h: int, k: int, r: int, g: int) -> np.ndarray:
        """(C, R + G(K-1), padded width) window for output rows [h, h+k)."""
        rows = self.span(h, k, r, g)
        out = np.zeros((self.channels, len(rows), self.padded_width), dtype=np.int64)
        for i, y in enumerate(rows):
            if y < 0 or y >= self.height:
                continue
            if y >= self.delivered:
                raise BufferUnderflowError(
                    f"row {y} requested but only {self.delivered} rows delivered")
            if y not in self._rows:
                raise BufferUnderflowError(f"row {y} was already released")
            out[:, i, self.pad:self.pad + self.width] = self._rows[y]
        return out


# ---------------------------------------------------------------------------
# layers

def flatten_for_fc(iact: QuantTensor) -> QuantTensor:
    """(C, H, W) -> (C*H*W, 1, 1), each channel's fraction repeated H*W times."""
    c = iact.dims[0]
    per = int(np.prod(iact.dims[1:])) if len(iact.dims) > 1 else 1
    fracs = tuple(f for f in iact.fmt.fraction_bits for _ in range(per))
    return QuantTensor(iact.values.reshape(c * per, 1, 1), QuantFormat(iact.bits, fracs))


def _check_conv(layer: LayerSpec, weights: QuantTensor, iact: QuantTensor) -> None:
    if not layer.is_compute:
        raise EngineError(f"layer {layer.index} is a pool layer; use pool_forward")
    want_w = (layer.out_channels, layer.channels_per_group, layer.kernel_h, layer.kernel_w)
    if weights.dims != want_w:
        raise ShapeError(f"layer {layer.index}: weights {weights.dims}, expected {want_w}")
    want_a = (layer.in_channels, layer.in_height, layer.in_width)
    if iact.dims != want_a:
        raise ShapeError(f"layer {layer.index}: input {iact.dims}, expected {want_a}")
    if weights.bits != iact.bits:
        raise EngineError(f"layer {layer.index}: {weights.bits}-bit weights with "
                          f"{iact.bits}-bit activations")


def conv_forward(layer: LayerSpec, cfg: EngineConfig, weights: QuantTensor,
                 iact: QuantTensor, backend=None) -> QuantTensor:
    """Run a conv or fully-connected layer; returns the (M, H, W) output tensor."""
    if layer.kind is LayerKind.FC and iact.dims != (layer.in_channels, 1, 1):
        iact = flatten_for_fc(iact)
    _check_conv(layer, weights, iact)
    kern = backend or kernels.backend
    bits = iact.bits
    n_m, g = layer.out_channels, layer.stride
    n_r, n_s = layer.kernel_h, layer.kernel_w

    fa = np.asarray(iact.fmt.fraction_bits, dtype=np.int64)
    act_shift = fa.max() - fa
    psum_frac = psum_fraction_bits(iact.fmt, weights.fmt)
    shifts = cfg.channel_shifts(n_m)
    out_frac = psum_frac - shifts
    if (out_frac < 0).any() or (out_frac >= bits).any():
        bad = int(np.argmax((out_frac < 0) | (out_frac >= bits)))
        raise EngineError(f"layer {layer.index}: output channel {bad} would carry "
                          f"{int(out_frac[bad])} fraction bits (psum fraction "
                          f"{int(psum_frac[bad])}, shift {int(shifts[bad])})")
    bias = _aligned_bias(cfg, psum_frac, n_m)

    padded_width = (layer.width - 1) * g + n_s
    buf = LineBuffer.from_tensor(iact.values, layer.padding, padded_width)
    wts = np.ascontiguousarray(weights.values, dtype=np.int64)
    out = np.empty((n_m, layer.height, layer.width), dtype=np.int64)
    k_par = cfg.k_par
    for h in range(0, layer.height, k_par):
        k = min(k_par, layer.height - h)
        window = np.ascontiguousarray(buf.window(h, k, n_r, g)[:, :, :padded_width])
        psum = np.ascontiguousarray(np.repeat(bias[:, None, None], k, axis=1)
                                    .repeat(layer.width, axis=2))
        status, m, kk, w = kern.conv_block(window, wts, act_shift, psum, k, g,
                                           cfg.c_par, cfg.m_par, layer.groups, cfg.debug)
        if status:
            what = "aligned product" if status == 1 else "partial sum"
            raise AccumulatorOverflowError(
                f"layer {layer.index}: {what} overflows 32 bits at output channel {m}, "
                f"row {h + kk}, column {w}", (m, h + kk, w))
        out[:, h:h + k, :] = requantize_array(psum, shifts, bits, cfg.activation)
        buf.release((h + k) * g - layer.padding)
    return QuantTensor(out, QuantFormat(bits, tuple(int(f) for f in out_frac)))


def _aligned_bias(cfg: EngineConfig, psum_frac: np.ndarray, n_m: int) -> np.ndarray:
    bias = cfg.channel_bias(n_m)
    if cfg.bias_fraction_bits is None:
        return bias
    bf = _per_channel(cfg.bias_fraction_bits, n_m, "bias_fraction_bits")
    lift = psum_frac - bf
    if (lift < 0).any():
        bad = int(np.argmax(lift < 0))
        raise EngineError(f"bias of channel {bad} has {int(bf[bad])} fraction bits, more "
                          f"than the partial sum's {int(psum_frac[bad])}")
    aligned = bias << lift
    if (aligned < INT32_MIN).any() or (aligned > INT32_MAX).any():
        raise AccumulatorOverflowError("aligned bias leaves the 32-bit range")
    return aligned


def pool_forward(layer: LayerSpec, iact: QuantTensor) -> QuantTensor:
    """Max pooling; windows hanging over the frame edge use only in-frame values."""
    if layer.kind is not LayerKind.POOL:
        raise EngineError(f"layer {layer.index} is not a pool layer")
    want = (layer.in_channels, layer.in_height, layer.in_width)
    if iact.dims != want:
        raise ShapeError(f"layer {layer.index}: input {iact.dims}, expected {want}")
    x = iact.values
    out = np.empty((layer.out_channels, layer.height, layer.width), dtype=np.int64)
    g, p = layer.stride, layer.padding
    for y in range(layer.height):
        y0, y1 = max(0, y * g - p), min(layer.in_height, y * g - p + layer.kernel_h)
        for xo in range(layer.width):
            x0, x1 = max(0, xo * g - p), min(layer.in_width, xo * g - p + layer.kernel_w)
            out[:, y, xo] = x[:, y0:y1, x0:x1].max(axis=(1, 2))
    return QuantTensor(out, iact.fmt)


def layer_forward(layer: LayerSpec, iact: QuantTensor, cfg: EngineConfig | None = None,
                  weights: QuantTensor | None = None, backend=None) -> QuantTensor:
    if layer.kind is LayerKind.POOL:
        return pool_forward(layer, iact)
    if cfg is None or weights is None:
        raise EngineError(f"layer {layer.index} needs weights and an engine config")
    return conv_forward(layer, cfg, weights, iact, backend=backend)
