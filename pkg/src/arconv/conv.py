"""2-d convolution and its transpose as differentiable ops.

Both ops share one lowering: windows are copied into a row matrix
(im2col) and the channel mixing becomes a single matrix product.  When
the stride equals the kernel extent and there is no padding, windows do
not overlap and the lowering degenerates to a reshape; that case is hit
constantly by the rectangular-sampling path, so it gets a dedicated
branch with no scatter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigurationError
from .tensor import Tensor


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v), int(v))
    a, b = v
    return (int(a), int(b))


@dataclass
class ConvKernel:
    """Weights (C_out, C_in, k_h, k_w), bias (C_out,), stride and padding."""

    weights: Tensor
    bias: Tensor
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        if self.weights.ndim != 4:
            raise ConfigurationError(
                f"kernel weights must have 4 axes, got shape {self.weights.shape}")
        c_out = self.weights.shape[0]
        kh, kw = self.weights.shape[2], self.weights.shape[3]
        if kh < 1 or kw < 1:
            raise ConfigurationError(f"kernel extent must be >= 1, got {kh}x{kw}")
        if self.stride[0] < 1 or self.stride[1] < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if self.padding[0] < 0 or self.padding[1] < 0:
            raise ConfigurationError(f"padding must be >= 0, got {self.padding}")
        if self.bias.ndim != 1 or self.bias.shape[0] != c_out:
            raise ConfigurationError(
                f"bias shape {self.bias.shape} does not match {c_out} output channels")
        if self.bias.dtype != self.weights.dtype:
            raise ConfigurationError("bias and weights must share one dtype")

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def extent(self) -> tuple[int, int]:
        return (self.weights.shape[2], self.weights.shape[3])

    def parameters(self) -> list[Tensor]:
        return [self.weights, self.bias]


def conv_kernel(rng: np.random.Generator, c_in: int, c_out: int, k,
                stride=1, padding=0, dtype=np.float32) -> ConvKernel:
    """Fresh kernel with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights."""
    kh, kw = _pair(k)
    bound = 1.0 / np.sqrt(c_in * kh * kw)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, kh, kw)).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return ConvKernel(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True),
                      stride=stride, padding=padding)


def _is_tiling(kh, kw, sh, sw, ph, pw, H, W) -> bool:
    return (sh == kh and sw == kw and ph == 0 and pw == 0
            and H % kh == 0 and W % kw == 0)


def tiles_to_cols(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Non-overlapping kh x kw tiles of (N,C,H,W) as im2col rows."""
    N, C, H, W = x.shape
    Ho, Wo = H // kh, W // kw
    t = x.reshape(N, C, Ho, kh, Wo, kw).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(t).reshape(N * Ho * Wo, C * kh * kw)


def cols_to_tiles(cols: np.ndarray, N: int, C: int, H: int, W: int,
                  kh: int, kw: int) -> np.ndarray:
    """Exact inverse of :func:`tiles_to_cols`."""
    Ho, Wo = H // kh, W // kw
    t = cols.reshape(N, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(t).reshape(N, C, H, W)


def _im2col(xp: np.ndarray, kh, kw, sh, sw, Ho, Wo) -> np.ndarray:
    N, C = xp.shape[0], xp.shape[1]
    cols = np.empty((N * Ho * Wo, C * kh * kw), dtype=xp.dtype)
    _kernels.im2col(xp, kh, kw, sh, sw, Ho, Wo, cols)
    return cols

def _col2im(cols: np.ndarray, N, C, Hp, Wp, kh, kw, sh, sw, Ho, Wo) -> np.ndarray:
    out = np.zeros((N, C, Hp, Wp), dtype=cols.dtype)
    _kernels.col2im(np.ascontiguousarray(cols), N, C, kh, kw, sh, sw, Ho, Wo, out)
    return out


def _out_extent(H, W, kh, kw, sh, sw, ph, pw):
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if Hp < kh or Wp < kw:
        raise ConfigurationError(
            f"window {kh}x{kw} exceeds padded extent {Hp}x{Wp}")
    return (Hp - kh) // sh + 1, (Wp - kw) // sw + 1


def conv2d(x: Tensor, k: ConvKernel) -> Tensor:
    """Cross-correlate x (N,C,H,W) with k; zero padding, floor output size."""
    if x.ndim != 4:
        raise ConfigurationError(f"conv2d input must have 4 axes, got {x.shape}")
    N, C, H, W = x.shape
    if C != k.c_in:
        raise ConfigurationError(
            f"input channels {x.shape} do not match kernel {k.weights.shape}")
    if x.dtype != k.weights.dtype:
        raise ConfigurationError(
            f"mixed dtypes {x.dtype} and {k.weights.dtype}")
    kh, kw = k.extent
    sh, sw = k.stride
    ph, pw = k.padding
    Ho, Wo = _out_extent(H, W, kh, kw, sh, sw, ph, pw)

    tiling = _is_tiling(kh, kw, sh, sw, ph, pw, H, W)
    if tiling:
        cols = tiles_to_cols(x.data, kh, kw)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
        cols = _im2col(xp, kh, kw, sh, sw, Ho, Wo)

    w_mat = k.weights.data.reshape(k.c_out, C * kh * kw)
    y_mat = cols @ w_mat.T
    y = np.ascontiguousarray(
        y_mat.reshape(N, Ho, Wo, k.c_out).transpose(0, 3, 1, 2))
    y += k.bias.data[None, :, None, None]

    w_t, b_t = k.weights, k.bias
    req = x.requires_grad or w_t.requires_grad or b_t.requires_grad
    out = Tensor(y, requires_grad=req)
    if req:
        out._parents = (x, w_t, b_t)

        def _backward(g):
            g_mat = np.ascontiguousarray(
                g.transpose(0, 2, 3, 1)).reshape(-1, k.c_out)
            if b_t.requires_grad:
                b_t._accumulate(g_mat.sum(axis=0))
            if w_t.requires_grad:
                w_t._accumulate((g_mat.T @ cols).reshape(k.weights.shape))
            if x.requires_grad:
                g_cols = g_mat @ w_mat
                if tiling:
                    gx = cols_to_tiles(g_cols, N, C, H, W, kh, kw)
                else:
                    gxp = _col2im(g_cols, N, C, H + 2 * ph, W + 2 * pw,
                                  kh, kw, sh, sw, Ho, Wo)
                    gx = gxp[:, :, ph:ph + H, pw:pw + W] if ph or pw else gxp
                x._accumulate(np.ascontiguousarray(gx))

        out._backward = _backward
    return out


def conv2d_transposed(x: Tensor, k: ConvKernel, bias: Tensor | None = None) -> Tensor:
    """Adjoint of :func:`conv2d` with the same kernel: maps C_out -> C_in.

    Output extent is (H-1)*s + k - 2p per axis.  ``k.bias`` is ignored
    (it is sized for the forward direction); pass ``bias`` with C_in
    entries to add one here.
    """
    if x.ndim != 4:
        raise ConfigurationError(f"input must have 4 axes, got {x.shape}")
    N, C, H, W = x.shape
    if C != k.c_out:
        raise ConfigurationError(
            f"input channels {x.shape} do not match kernel {k.weights.shape} "
            "(transposed direction consumes C_out)")
    if x.dtype != k.weights.dtype:
        raise ConfigurationError(f"mixed dtypes {x.dtype} and {k.weights.dtype}")
    kh, kw = k.extent
    sh, sw = k.stride
    ph, pw = k.padding
    Hp = (H - 1) * sh + kh
    Wp = (W - 1) * sw + kw
    Hout, Wout = Hp - 2 * ph, Wp - 2 * pw
    if Hout < 1 or Wout < 1:
        raise ConfigurationError(
            f"padding {k.padding} swallows the whole {Hp}x{Wp} output")
    if bias is not None and (bias.ndim != 1 or bias.shape[0] != k.c_in):
        raise ConfigurationError(
            f"bias shape {bias.shape} does not match {k.c_in} output channels")

    w_mat = k.weights.data.reshape(k.c_out, k.c_in * kh * kw)
    x_mat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, C)
    cols = x_mat @ w_mat
    tiling = _is_tiling(kh, kw, sh, sw, ph, pw, Hout, Wout)
    if tiling:
        y = cols_to_tiles(cols, N, k.c_in, Hout, Wout, kh, kw)
    else:
        y_full = _col2im(cols, N, k.c_in, Hp, Wp, kh, kw, sh, sw, H, W)
        y = np.ascontiguousarray(y_full[:, :, ph:ph + Hout, pw:pw + Wout]) \
            if ph or pw else y_full
    if bias is not None:
        y = y + bias.data[None, :, None, None]

    w_t = k.weights
    parents = [x, w_t] + ([bias] if bias is not None else [])
    req = any(p.requires_grad for p in parents)
    out = Tensor(y, requires_grad=req)
    if req:
        out._parents = tuple(parents)

        def _backward(g):
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2, 3)))
            gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else g
            if tiling:
                g_cols = tiles_to_cols(gp, kh, kw)
            else:
                g_cols = _im2col(gp, kh, kw, sh, sw, H, W)
            if w_t.requires_grad:
                w_t._accumulate((x_mat.T @ g_cols).reshape(k.weights.shape))
            if x.requires_grad:
                gx_mat = g_cols @ w_mat.T
                x._accumulate(np.ascontiguousarray(
                    gx_mat.reshape(N, H, W, C).transpose(0, 3, 1, 2)))

        out._backward = _backward
    return out
