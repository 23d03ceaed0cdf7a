"""Dense feature maps and the regular convolution / downsampling building blocks.

Everything in here operates on plain ``HxWxC`` float32 grids. The convolution
is a same-padded cross-correlation with a fixed tap accumulation order
(``ky`` outer, then ``kx``, then input channel), which keeps results
reproducible bit for bit and lets the sparse path in :mod:`mrconv.sparse`
match it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

__all__ = [
    "DenseTensor",
    "ConvLayer",
    "Reducer",
    "conv2d",
    "regular_downsample",
    "sobel_magnitude",
    "reduce_patch_stack",
]


class Reducer(str, Enum):
    """Patch reducer: collapses one d x d x C patch to a C-vector."""

    UNIFORM = "uniform"  # keep the top-left element (lattice sampling)
    MAX = "max"
    AVERAGE = "avg"

    @classmethod
    def parse(cls, token: str) -> "Reducer":
        try:
            return cls(token)
        except ValueError:
            raise ValueError(
                f"unknown reducer {token!r}, expected one of "
                f"{[r.value for r in cls]}"
            ) from None


def _as_f32_grid(data, ndim: int, what: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != ndim:
        raise ValueError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite values")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DenseTensor:
    """Immutable H x W x C float32 feature map (row-major y, x, c)."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_f32_grid(self.data, 3, "tensor data")
        h, w, c = arr.shape
        if h < 1 or w < 1 or c < 1:
            raise ValueError(f"tensor dims must be positive, got {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "DenseTensor":
        return cls(np.zeros((height, width, channels), dtype=np.float32))

    @classmethod
    def single_channel(cls, grid) -> "DenseTensor":
        """Wrap a 2-D array as an H x W x 1 tensor."""
        arr = np.asarray(grid, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D grid, got shape {arr.shape}")
        return cls(arr[:, :, None])


@dataclass(frozen=True)
class ConvLayer:
    """Same-padded K x K cross-correlation with optional bias and ReLU.

    Output spatial size always equals input spatial size: the zero padding is
    (K-1)/2 * dilation on each side. Only odd kernel sizes are supported so
    the padding stays symmetric.
    """

    kernel_size: int
    in_channels: int
    out_channels: int
    weights: np.ndarray  # (K, K, Cin, Cout)
    bias: np.ndarray | None = None  # (Cout,)
    dilation: int = 1
    relu: bool = False

    def __post_init__(self):
        k, cin, cout = self.kernel_size, self.in_channels, self.out_channels
        if k < 1 or k % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {k}")
        if cin < 1 or cout < 1:
            raise ValueError(f"channel counts must be positive, got {cin}->{cout}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        w = np.asarray(self.weights, dtype=np.float32)
        if w.shape != (k, k, cin, cout):
            raise ValueError(
                f"weights shape {w.shape} does not match "
                f"(K, K, Cin, Cout) = {(k, k, cin, cout)}"
            )
        if not np.isfinite(w).all():
            raise ValueError("weights contain non-finite values")
        object.__setattr__(self, "weights", _freeze(w))
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float32)
            if b.shape != (cout,):
                raise ValueError(f"bias shape {b.shape} != ({cout},)")
            if not np.isfinite(b).all():
                raise ValueError("bias contains non-finite values")
            object.__setattr__(self, "bias", _freeze(b))

    @classmethod
    def identity(cls, channels: int) -> "ConvLayer":
        """1x1 kernel passing each channel through unchanged."""
        w = np.zeros((1, 1, channels, channels), dtype=np.float32)
        w[0, 0] = np.eye(channels, dtype=np.float32)
        return cls(1, channels, channels, w)

    @classmethod
    def random(cls, rng: np.random.Generator, kernel_size: int, in_channels: int,
               out_channels: int, relu: bool = False, with_bias: bool = True,
               dilation: int = 1) -> "ConvLayer":
        """Weights uniform in [-1, 1] / K^2 keep activations O(1) deep in a stack."""
        k = kernel_size
        w = rng.uniform(-1.0, 1.0, (k, k, in_channels, out_channels)) / (k * k)
        b = rng.uniform(-0.1, 0.1, out_channels) if with_bias else None
        return cls(k, in_channels, out_channels, w.astype(np.float32),
                   None if b is None else b.astype(np.float32),
                   dilation=dilation, relu=relu)

    def with_dilation(self, dilation: int) -> "ConvLayer":
        return replace(self, dilation=dilation)


def _shifted(data: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """out[y, x] = data[y + dy, x + dx], reading exactly 0.0 out of bounds."""
    h, w = data.shape[:2]
    out = np.zeros_like(data)
    ys0, ys1 = max(0, dy), min(h, h + dy)
    xs0, xs1 = max(0, dx), min(w, w + dx)
    if ys0 < ys1 and xs0 < xs1:
        out[ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx] = data[ys0:ys1, xs0:xs1]
    return out


def conv2d(inp: DenseTensor, layer: ConvLayer) -> DenseTensor:
    """Same-padded cross-correlation, optionally followed by bias and ReLU.

    Taps are accumulated in fixed (ky, kx, ci) order with out-of-bounds taps
    contributing an explicit 0.0, so results are deterministic and identical
    to the sparse multi-resolution path when the tap values agree.
    """
    if inp.channels != layer.in_channels:
        raise ValueError(
            f"input has {inp.channels} channels, layer expects {layer.in_channels}"
        )
    k, dil = layer.kernel_size, layer.dilation
    c = (k - 1) // 2
    h, w = inp.height, inp.width
    out = np.zeros((h, w, layer.out_channels), dtype=np.float32)
    if layer.bias is not None:
        out[:] = layer.bias
    for ky in range(k):
        for kx in range(k):
            slab = _shifted(inp.data, (ky - c) * dil, (kx - c) * dil)
            w_tap = layer.weights[ky, kx]  # (Cin, Cout)
            for ci in range(layer.in_channels):
                out += slab[:, :, ci:ci + 1] * w_tap[ci]
    if layer.relu:
        out = np.maximum(out, np.float32(0.0))
    return DenseTensor(out)


def patch_stack(f: DenseTensor, d: int) -> np.ndarray:
    """All non-overlapping d x d patches as an (H/d, W/d, d, d, C) view."""
    h, w, c = f.shape
    return (
        f.data.reshape(h // d, d, w // d, d, c)
        .transpose(0, 2, 1, 3, 4)
    )


def reduce_patch_stack(stack: np.ndarray, reducer: Reducer) -> np.ndarray:
    """Collapse the trailing (d, d) patch axes of (..., d, d, C) to (..., C).

    One shared implementation keeps regular and adaptive downsampling
    bit-identical on the patches they both reduce.
    """
    if reducer is Reducer.UNIFORM:
        return np.ascontiguousarray(stack[..., 0, 0, :])
    stack = np.ascontiguousarray(stack)  # pin the reduction's memory walk
    if reducer is Reducer.MAX:
        return stack.max(axis=(-3, -2))
    if reducer is Reducer.AVERAGE:
        return stack.mean(axis=(-3, -2), dtype=np.float32)
    raise ValueError(f"unknown reducer {reducer!r}")


def regular_downsample(f: DenseTensor, d: int, reducer: Reducer) -> DenseTensor:
    """Reduce every non-overlapping d x d patch to one element."""
    if d < 2:
        raise ValueError(f"downsampling factor must be >= 2, got {d}")
    if f.height % d or f.width % d:
        raise ValueError(
            f"factor {d} does not divide spatial dims {f.height}x{f.width}"
        )
    return DenseTensor(reduce_patch_stack(patch_stack(f, d), reducer))


# Standard 3x3 Sobel pair. On inputs in [0, 1] each response is bounded by 4,
# so the magnitude of the pair is bounded by 4*sqrt(2); dividing by that maps
# the normalized response into [0, 1] (the bound itself is not attained).
SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float32)
SOBEL_Y = SOBEL_X.T.copy()
SOBEL_SCALE = np.float32(1.0 / (4.0 * math.sqrt(2.0)))


def sobel_magnitude(gray: DenseTensor) -> DenseTensor:
    """Normalized Sobel gradient magnitude of a single-channel image."""
    if gray.channels != 1:
        raise ValueError(f"expected a single-channel image, got C={gray.channels}")
    gx = conv2d(gray, ConvLayer(3, 1, 1, SOBEL_X[:, :, None, None]))
    gy = conv2d(gray, ConvLayer(3, 1, 1, SOBEL_Y[:, :, None, None]))
    mag = np.sqrt(gx.data ** 2 + gy.data ** 2) * SOBEL_SCALE
    return DenseTensor(mag)
