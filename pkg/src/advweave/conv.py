"""Reference convolution, activation, pooling, and dense layers.

conv2d is a cross-correlation (no kernel flip), the deep-learning
convention; every equivalence oracle in this repo uses the same
convention on both sides. Integer inputs are computed in int64 and are
bit-exact; reduction order within one output element is the row-major
scan, so results are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadGeometry, ShapeMismatch
from .tensor import Tensor3


@dataclass(frozen=True)
class FilterBank:
    """weights: (out_channels, in_channels, kernel_h, kernel_w); bias: (out_channels,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 4:
            raise ShapeMismatch(f"weights need 4 dims, got {w.ndim}")
        if w.shape[2] < 1 or w.shape[3] < 1:
            raise ShapeMismatch("kernel dims must be >= 1")
        if b.shape != (w.shape[0],):
            raise ShapeMismatch(
                f"bias shape {b.shape} != (out_channels,) = ({w.shape[0]},)")
        object.__setattr__(self, "weights", np.ascontiguousarray(w))
        object.__setattr__(self, "bias", np.ascontiguousarray(b))

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_h(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel_w(self) -> int:
        return self.weights.shape[3]


@dataclass(frozen=True)
class ConvGeometry:
    stride_v: int = 1
    stride_h: int = 1
    pad_h: int = 0
    pad_w: int = 0

    def __post_init__(self):
        if self.stride_v < 1 or self.stride_h < 1:
            raise BadGeometry("strides must be >= 1")
        if self.pad_h < 0 or self.pad_w < 0:
            raise BadGeometry("padding must be >= 0")

    def out_shape(self, in_h: int, in_w: int, kh: int, kw: int) -> tuple[int, int]:
        oh = (in_h + 2 * self.pad_h - kh) // self.stride_v + 1
        ow = (in_w + 2 * self.pad_w - kw) // self.stride_h + 1
        if oh < 1 or ow < 1:
            raise BadGeometry(
                f"kernel {kh}x{kw} stride ({self.stride_v},{self.stride_h}) "
                f"pad ({self.pad_h},{self.pad_w}) on {in_h}x{in_w} input "
                f"gives non-positive output {oh}x{ow}")
        return oh, ow


def _windows(x: np.ndarray, kh: int, kw: int, sv: int, sh: int) -> np.ndarray:
    # shape (C, out_h, out_w, kh, kw)
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    return win[:, ::sv, ::sh, :, :]


def _padded(input: Tensor3, geom: ConvGeometry) -> np.ndarray:
    x = input.data
    if input.is_integer():
        x = x.astype(np.int64)
    if geom.pad_h or geom.pad_w:
        x = np.pad(x, ((0, 0), (geom.pad_h, geom.pad_h), (geom.pad_w, geom.pad_w)))
    return x


def conv2d(input: Tensor3, filters: FilterBank, geom: ConvGeometry = ConvGeometry()) -> Tensor3:
    """Sliding dot product of each filter over the input, plus bias."""
    if input.channels != filters.in_channels:
        raise ShapeMismatch(
            f"input has {input.channels} channels, filters expect "
            f"{filters.in_channels}")
    geom.out_shape(input.height, input.width, filters.kernel_h, filters.kernel_w)
    x = _padded(input, geom)
    win = _windows(x, filters.kernel_h, filters.kernel_w, geom.stride_v, geom.stride_h)
    w = filters.weights
    if np.issubdtype(x.dtype, np.integer) and np.issubdtype(w.dtype, np.integer):
        w = w.astype(np.int64)
        b = filters.bias.astype(np.int64)
    else:
        win = win.astype(np.float64)
        w = w.astype(np.float64)
        b = filters.bias.astype(np.float64)
    out = np.einsum("chwjk,ocjk->ohw", win, w)
    out += b[:, None, None]
    return Tensor3(out)


def relu(t: Tensor3) -> Tensor3:
    return Tensor3(np.maximum(t.data, 0))


def maxpool2(t: Tensor3) -> Tensor3:
    """2x2 max pooling with stride 2; requires even spatial dims."""
    if t.height % 2 or t.width % 2:
        raise BadGeometry(f"maxpool2 needs even dims, got {t.height}x{t.width}")
    win = t.data.reshape(t.channels, t.height // 2, 2, t.width // 2, 2)
    return Tensor3(win.max(axis=(2, 4)))


def dense(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map W @ x + b."""
    x, W, b = np.asarray(x), np.asarray(W), np.asarray(b)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeMismatch("dense expects matrix W, vectors x and b")
    if W.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"W has {W.shape[1]} columns, x has {x.shape[0]}")
    if b.shape[0] != W.shape[0]:
        raise ShapeMismatch(f"b has {b.shape[0]} rows, W has {W.shape[0]}")
    return W @ x + b
