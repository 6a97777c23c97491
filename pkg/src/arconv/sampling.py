"""Fractional rectangular sampling around every pixel.

Given per-pixel window extents (h0, w0) and a point count (k_h, k_w),
each pixel (u, v) is surrounded by a k_h x k_w grid of sample points at

    (u + (2i + 1 - k_h) * h0 / (2 k_h),  v + (2j + 1 - k_w) * w0 / (2 k_w))

for 0-based i, j.  The grid is centred on the pixel, covers extent
h0 x w0, and collapses to the integer lattice when h0 == k_h and
w0 == k_w.  Samples are read bilinearly; points outside the image read
zero, matching zero padding.  Sample coordinates use floor cells, so a
point exactly on a grid line belongs to the lower/right cell.

The expanded map S stores the samples of pixel (u, v) as a k_h x k_w
tile at rows u*k_h.., columns v*k_w.., so a convolution with stride
(k_h, k_w) over S touches exactly one pixel's samples per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .conv import cols_to_tiles, tiles_to_cols
from .errors import ConfigurationError
from .tensor import Tensor


@dataclass(frozen=True)
class KernelSpec:
    """Number of sample points per axis; both odd and within [1, k_max]."""

    k_h: int
    k_w: int

    def __post_init__(self):
        for k in (self.k_h, self.k_w):
            if k < 1 or k % 2 == 0:
                raise ConfigurationError(f"point counts must be odd and >= 1, got {self}")


@dataclass
class SamplingMap:
    """Expanded sample plane (N, C, k_h*H, k_w*W) plus the spec that built it."""

    s: Tensor
    spec: KernelSpec


def offset_coeffs(k: int) -> np.ndarray:
    """d(offset)/d(extent) per sample index: (2i + 1 - k) / (2k)."""
    return np.array([(2 * i + 1 - k) / (2.0 * k) for i in range(k)])


def offset_grid(spec: KernelSpec, h0: float, w0: float) -> np.ndarray:
    """Reference (k_h, k_w, 2) array of (dy, dx) offsets for one pixel.

    The compiled path computes the same values inline; this function is
    the readable definition used by tests.  The numerator product is
    formed before dividing so integer-valued offsets are exact.
    """
    kh, kw = spec.k_h, spec.k_w
    out = np.empty((kh, kw, 2))
    for i in range(kh):
        dy = ((2 * i + 1 - kh) * h0) / (2.0 * kh)
        for j in range(kw):
            out[i, j, 0] = dy
            out[i, j, 1] = ((2 * j + 1 - kw) * w0) / (2.0 * kw)
    return out


def _stage(hm: np.ndarray, wm: np.ndarray, kh: int, kw: int):
    N, H, W = hm.shape
    P = N * H * W
    y0s = np.empty((P, kh), dtype=np.int64)
    wys = np.empty((P, kh), dtype=hm.dtype)
    x0s = np.empty((P, kw), dtype=np.int64)
    wxs = np.empty((P, kw), dtype=wm.dtype)
    _kernels.stage_offsets(hm, wm, kh, kw, y0s, wys, x0s, wxs)
    return y0s, wys, x0s, wxs


def sample_cols(x: Tensor, h: Tensor, w: Tensor, spec: KernelSpec) -> Tensor:
    """Sample k_h*k_w points per pixel into im2col row layout.

    x is (N, C, H, W); h and w are (N, 1, H, W) extent maps.  The result
    is (N*H*W, C*k_h*k_w), ready for a stride-(k_h, k_w) kernel matrix.
    Differentiable in x, h and w; gradients of out-of-image samples are
    dropped, consistent with the zero forward reads.
    """
    N, C, H, W = x.shape
    if h.shape != (N, 1, H, W) or w.shape != (N, 1, H, W):
        raise ConfigurationError(
            f"extent maps {h.shape}/{w.shape} do not match input {x.shape}")
    if h.dtype != x.dtype or w.dtype != x.dtype:
        raise ConfigurationError("extent maps and input must share one dtype")
    kh, kw = spec.k_h, spec.k_w
    hm = np.ascontiguousarray(h.data.reshape(N, H, W))
    wm = np.ascontiguousarray(w.data.reshape(N, H, W))
    xd = np.ascontiguousarray(x.data)
    y0s, wys, x0s, wxs = _stage(hm, wm, kh, kw)
    cols = np.empty((N * H * W, C * kh * kw), dtype=x.dtype)
    _kernels.sample_forward(xd, y0s, wys, x0s, wxs, kh, kw, cols)

    req = x.requires_grad or h.requires_grad or w.requires_grad
    out = Tensor(cols, requires_grad=req)
    if req:
        out._parents = (x, h, w)

        def _backward(g):
            gcols = np.ascontiguousarray(g)
            gx = np.zeros_like(xd)
            gh_part = np.zeros((C, N * H * W), dtype=xd.dtype)
            gw_part = np.zeros((C, N * H * W), dtype=xd.dtype)
            _kernels.sample_backward(gcols, xd, y0s, wys, x0s, wxs, kh, kw,
                                     offset_coeffs(kh), offset_coeffs(kw),
                                     gx, gh_part, gw_part)
            if x.requires_grad:
                x._accumulate(gx)
            if h.requires_grad:
                h._accumulate(gh_part.sum(axis=0).reshape(N, 1, H, W))
            if w.requires_grad:
                w._accumulate(gw_part.sum(axis=0).reshape(N, 1, H, W))

        out._backward = _backward
    return out


def cols_to_map(cols: Tensor, N: int, C: int, H: int, W: int,
                spec: KernelSpec) -> Tensor:
    """Rearrange sample rows into the expanded plane (differentiable)."""
    kh, kw = spec.k_h, spec.k_w
    data = cols_to_tiles(cols.data, N, C, H * kh, W * kw, kh, kw)
    out = Tensor(data, requires_grad=cols.requires_grad)
    if out.requires_grad:
        out._parents = (cols,)

        def _backward(g):
            cols._accumulate(tiles_to_cols(g, kh, kw))

        out._backward = _backward
    return out


def map_to_cols(s: Tensor, spec: KernelSpec) -> Tensor:
    """Inverse of :func:`cols_to_map` (differentiable)."""
    kh, kw = spec.k_h, spec.k_w
    N, C, Hk, Wk = s.shape
    data = tiles_to_cols(s.data, kh, kw)
    out = Tensor(data, requires_grad=s.requires_grad)
    if out.requires_grad:
        out._parents = (s,)

        def _backward(g):
            s._accumulate(cols_to_tiles(g, N, C, Hk, Wk, kh, kw))

        out._backward = _backward
    return out


def build_sampling_map(x: Tensor, h: Tensor, w: Tensor,
                       spec: KernelSpec) -> SamplingMap:
    """Expand x into its per-pixel sample plane S of (N, C, k_h*H, k_w*W)."""
    N, C, H, W = x.shape
    cols = sample_cols(x, h, w, spec)
    return SamplingMap(s=cols_to_map(cols, N, C, H, W, spec), spec=spec)
