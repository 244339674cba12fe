"""Reference fixed-point layer arithmetic in plain mathematical order.

Built directly on whole-array numpy operations over an explicitly
zero-extended input, with none of the engine's tiling, line buffering or
kernel code.  The 32-bit wrap is applied once to the exact sum, which equals
step-by-step wrapping because addition modulo 2**32 is order-free.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["conv_reference", "pool_reference", "requantize_reference", "exact_psum"]


def exact_psum(x: np.ndarray, act_frac, w: np.ndarray, stride: int, pad: int,
               out_hw: tuple[int, int], groups: int = 1) -> np.ndarray:
    """Unwrapped partial sums (M, H, W) on the max(act_frac) + w_frac scale."""
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    act_frac = np.asarray(act_frac, dtype=np.int64)
    c_in, in_h, in_w = x.shape
    m, c_group, r, s = w.shape
    out_h, out_w = out_hw
    need_h = (out_h - 1) * stride + r
    need_w = (out_w - 1) * stride + s
    big = np.zeros((c_in, max(need_h, in_h + 2 * pad), max(need_w, in_w + 2 * pad)), np.int64)
    big[:, pad:pad + in_h, pad:pad + in_w] = x
    scaled = big * (np.int64(1) << (act_frac.max() - act_frac))[:, None, None]
    # (C, out_h, out_w, R, S) windows
    win = sliding_window_view(scaled, (r, s), axis=(1, 2))[:, ::stride, ::stride][:, :out_h, :out_w]
    out = np.zeros((m, out_h, out_w), dtype=np.int64)
    per_group = m // groups
    for gi in range(groups):
        cs = slice(gi * c_group, (gi + 1) * c_group)
        ms = slice(gi * per_group, (gi + 1) * per_group)
        out[ms] = np.einsum("chwrs,mcrs->mhw", win[cs], w[ms])
    return out


def requantize_reference(psum: np.ndarray, shifts, out_bits: int,
                         activation: str = "relu") -> np.ndarray:
    psum = np.asarray(psum, dtype=np.int64)
    if activation == "relu":
        psum = np.where(psum > 0, psum, 0)
    div = np.int64(1) << np.asarray(shifts, dtype=np.int64)
    div = div.reshape((-1,) + (1,) * (psum.ndim - 1))
    q = np.floor_divide(psum, div)
    return np.clip(q, -(2 ** (out_bits - 1)), 2 ** (out_bits - 1) - 1)


def conv_reference(x: np.ndarray, act_frac, w: np.ndarray, w_frac, stride: int, pad: int,
                   out_hw: tuple[int, int], shifts, bias=None, bias_frac=None,
                   out_bits: int = 16, groups: int = 1, activation: str = "relu"):
    """Returns (output values, output fraction bits per channel)."""
    m = w.shape[0]
    psum_frac = int(np.max(act_frac)) + np.asarray(w_frac, dtype=np.int64)
    total = exact_psum(x, act_frac, w, stride, pad, out_hw, groups)
    if bias is not None:
        b = np.broadcast_to(np.asarray(bias, dtype=np.int64), (m,))
        if bias_frac is not None:
            b = b * (np.int64(1) << (psum_frac - np.asarray(bias_frac, dtype=np.int64)))
        total = total + b[:, None, None]
    wrapped = (total + 2 ** 31) % 2 ** 32 - 2 ** 31
    shifts = np.broadcast_to(np.asarray(shifts, dtype=np.int64), (m,))
    return requantize_reference(wrapped, shifts, out_bits, activation), psum_frac - shifts


def pool_reference(x: np.ndarray, r: int, s: int, stride: int, pad: int,
                   out_hw: tuple[int, int]) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    c, in_h, in_w = x.shape
    out_h, out_w = out_hw
    floor = np.iinfo(np.int64).min
    need_h = max((out_h - 1) * stride + r, in_h + 2 * pad)
    need_w = max((out_w - 1) * stride + s, in_w + 2 * pad)
    big = np.full((c, need_h, need_w), floor, dtype=np.int64)
    big[:, pad:pad + in_h, pad:pad + in_w] = x
    win = sliding_window_view(big, (r, s), axis=(1, 2))[:, ::stride, ::stride][:, :out_h, :out_w]
    return win.max(axis=(3, 4))
