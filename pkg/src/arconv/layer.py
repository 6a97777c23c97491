"""The adaptive rectangular convolution layer.

Per pixel, a small subnet predicts a window extent (height, width)
inside a configured range.  The batch-mean extent picks an odd number
of sample points per axis, the window is sampled bilinearly at those
points, and a stored square kernel's centre crop is applied with stride
equal to the point count.  A second pair of 1x1 subnets modulates the
result with a learned elementwise scale and shift.

Three switches ablate the moving parts: ``hwa`` pins the extents to the
point count (recovering a standard convolution), ``nspa`` pins the
point count to ``fixed_spec`` while extents stay learned, and ``at``
drops the elementwise modulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conv import ConvKernel, conv2d, conv_kernel
from .errors import ConfigurationError
from .sampling import KernelSpec, SamplingMap, sample_cols
from .tensor import Tensor

_EXTRACT_WIDTH = 16


@dataclass(frozen=True)
class HWRange:
    """Open extent range (b, a + b): a scales the unit response, b shifts it."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0):
            raise ConfigurationError(f"range scale must be positive, got a={self.a}")
        if self.b < 0:
            raise ConfigurationError(f"range shift must be >= 0, got b={self.b}")

    @property
    def top(self) -> float:
        return self.a + self.b

    @classmethod
    def from_label(cls, label: str, max_top: float = 63.0) -> "HWRange":
        """Parse 'lo-hi' (e.g. '1-18') into b=lo, a=hi-lo."""
        try:
            lo_s, hi_s = label.split("-")
            lo, hi = float(lo_s), float(hi_s)
        except ValueError as exc:
            raise ConfigurationError(f"bad extent range label {label!r}") from exc
        if not (hi > lo >= 0):
            raise ConfigurationError(f"extent range needs hi > lo >= 0, got {label!r}")
        if hi > max_top:
            raise ConfigurationError(
                f"extent range top {hi} exceeds the configured maximum {max_top}")
        return cls(a=hi - lo, b=lo)


@dataclass
class HWField:
    """Learned per-pixel extents, each (N, 1, H, W) with values in (b, a+b)."""

    h: Tensor
    w: Tensor
    range_h: HWRange
    range_w: HWRange


def nearest_smaller_odd(x: int) -> int:
    """x for odd x, x - 1 for even x."""
    return x - 1 if x % 2 == 0 else x


def _select_one(ybar: float, step: float, rng: HWRange, k_max: int) -> int:
    if step <= 0:
        raise ConfigurationError(f"selection step must be positive, got {step}")
    # An extent range topping out at t can never justify more than t points.
    cap = min(k_max, max(1, nearest_smaller_odd(int(math.floor(rng.top)))))
    raw = int(math.floor(ybar / step))
    raw = min(max(raw, 1), cap)
    return nearest_smaller_odd(raw)


def select_points(hw: HWField, n: float | None = None, m: float | None = None,
                  k_max: int = 7) -> KernelSpec:
    """Pick odd point counts from the batch-mean extents.

    The count is floor(mean / step) snapped down to odd and clamped to
    [1, k_max]; the step defaults to (a + b) / 8 of the axis range.
    """
    n_eff = (hw.range_h.top / 8.0) if n is None else n
    m_eff = (hw.range_w.top / 8.0) if m is None else m
    k_h = _select_one(float(hw.h.data.mean()), n_eff, hw.range_h, k_max)
    k_w = _select_one(float(hw.w.data.mean()), m_eff, hw.range_w, k_max)
    return KernelSpec(k_h, k_w)


@dataclass
class ARConvParams:
    """All learnable state plus the behaviour switches of one layer."""

    extract1: ConvKernel
    extract2: ConvKernel
    head_h: ConvKernel
    head_w: ConvKernel
    sk: Tensor
    sk_bias: Tensor
    mod_m: ConvKernel
    mod_b: ConvKernel
    range_h: HWRange
    range_w: HWRange
    k_max: int = 7
    n: float | None = None
    m: float | None = None
    hwa: bool = True
    nspa: bool = True
    at: bool = True
    fixed_spec: KernelSpec = field(default_factory=lambda: KernelSpec(3, 3))

    def __post_init__(self):
        if self.k_max < 1 or self.k_max % 2 == 0:
            raise ConfigurationError(f"k_max must be odd and >= 1, got {self.k_max}")
        if self.sk.shape[2] != self.k_max or self.sk.shape[3] != self.k_max:
            raise ConfigurationError(
                f"stored kernel {self.sk.shape} does not match k_max {self.k_max}")
        if self.fixed_spec.k_h > self.k_max or self.fixed_spec.k_w > self.k_max:
            raise ConfigurationError(
                f"fixed spec {self.fixed_spec} exceeds k_max {self.k_max}")

    @property
    def c_in(self) -> int:
        return self.sk.shape[1]

    @property
    def c_out(self) -> int:
        return self.sk.shape[0]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for sub, name in ((self.extract1, "extract1"), (self.extract2, "extract2"),
                          (self.head_h, "head_h"), (self.head_w, "head_w"),
                          (self.mod_m, "mod_m"), (self.mod_b, "mod_b")):
            out.append((f"{prefix}{name}.weights", sub.weights))
            out.append((f"{prefix}{name}.bias", sub.bias))
        out.append((f"{prefix}sk", self.sk))
        out.append((f"{prefix}sk_bias", self.sk_bias))
        return out


def arconv_params(rng: np.random.Generator, c_in: int, c_out: int,
                  range_h: HWRange, range_w: HWRange, k_max: int = 7,
                  n: float | None = None, m: float | None = None,
                  hwa: bool = True, nspa: bool = True, at: bool = True,
                  fixed_spec: KernelSpec = KernelSpec(3, 3),
                  dtype=np.float32) -> ARConvParams:
    """Initialise one layer.

    Subnet weights start uniform in (-0.01, 0.01) with zero bias, so
    extents begin near mid-range and the modulation near identity.  The
    stored kernel uses the usual 1/sqrt(fan_in) uniform window.
    """
    def small(c_i, c_o, k, padding=0):
        kk = conv_kernel(rng, c_i, c_o, k, stride=1, padding=padding, dtype=dtype)
        kk.weights.data[:] = rng.uniform(-0.01, 0.01, size=kk.weights.shape).astype(dtype)
        return kk

    extract1 = small(c_in, _EXTRACT_WIDTH, 3, padding=1)
    extract2 = small(_EXTRACT_WIDTH, _EXTRACT_WIDTH, 3, padding=1)
    head_h = small(_EXTRACT_WIDTH, 1, 1)
    head_w = small(_EXTRACT_WIDTH, 1, 1)
    mod_m = small(c_in, c_out, 1)
    mod_b = small(c_in, c_out, 1)
    bound = 1.0 / math.sqrt(c_in * k_max * k_max)
    sk = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k_max, k_max)).astype(dtype),
                requires_grad=True)
    sk_bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
    return ARConvParams(extract1=extract1, extract2=extract2, head_h=head_h,
                        head_w=head_w, sk=sk, sk_bias=sk_bias, mod_m=mod_m,
                        mod_b=mod_b, range_h=range_h, range_w=range_w,
                        k_max=k_max, n=n, m=m, hwa=hwa, nspa=nspa, at=at,
                        fixed_spec=fixed_spec)


def learn_hw(x: Tensor, params: ARConvParams) -> HWField:
    """Predict per-pixel extents from x through the shared extractor."""
    f = conv2d(x, params.extract1).relu()
    f = conv2d(f, params.extract2).relu()
    rh, rw = params.range_h, params.range_w
    h = conv2d(f, params.head_h).sigmoid() * rh.a + rh.b
    w = conv2d(f, params.head_w).sigmoid() * rw.a + rw.b
    return HWField(h=h, w=w, range_h=rh, range_w=rw)


def affine_maps(x: Tensor, params: ARConvParams) -> tuple[Tensor, Tensor]:
    """Elementwise scale (centred at 1) and shift maps, each (N, C_out, H, W)."""
    m = conv2d(x, params.mod_m) + 1.0
    b = conv2d(x, params.mod_b)
    return m, b


def sk_center(sk: Tensor, k_h: int, k_w: int) -> Tensor:
    """Centre crop of the stored square kernel (differentiable)."""
    km_h, km_w = sk.shape[2], sk.shape[3]
    oh, ow = (km_h - k_h) // 2, (km_w - k_w) // 2
    data = np.ascontiguousarray(sk.data[:, :, oh:oh + k_h, ow:ow + k_w])
    out = Tensor(data, requires_grad=sk.requires_grad)
    if out.requires_grad:
        out._parents = (sk,)

        def _backward(g):
            full = np.zeros_like(sk.data)
            full[:, :, oh:oh + k_h, ow:ow + k_w] = g
            sk._accumulate(full)

        out._backward = _backward
    return out


def _linear_rows(cols: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """rows (P, K) x weights (C_out, ..K..) + bias -> (P, C_out)."""
    c_out = w.shape[0]
    w_mat = w.data.reshape(c_out, -1)
    out_data = cols.data @ w_mat.T + bias.data[None, :]
    req = cols.requires_grad or w.requires_grad or bias.requires_grad
    out = Tensor(out_data, requires_grad=req)
    if req:
        out._parents = (cols, w, bias)

        def _backward(g):
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=0))
            if w.requires_grad:
                w._accumulate((g.T @ cols.data).reshape(w.shape))
            if cols.requires_grad:
                cols._accumulate(g @ w_mat)

        out._backward = _backward
    return out


def _rows_to_image(rows: Tensor, N: int, H: int, W: int) -> Tensor:
    """(N*H*W, C) rows in scan order back to (N, C, H, W)."""
    C = rows.shape[1]
    data = np.ascontiguousarray(
        rows.data.reshape(N, H, W, C).transpose(0, 3, 1, 2))
    out = Tensor(data, requires_grad=rows.requires_grad)
    if out.requires_grad:
        out._parents = (rows,)

        def _backward(g):
            rows._accumulate(np.ascontiguousarray(
                g.transpose(0, 2, 3, 1)).reshape(-1, C))

        out._backward = _backward
    return out


def _const_extent(x: Tensor, value: float) -> Tensor:
    N, _, H, W = x.shape
    return Tensor(np.full((N, 1, H, W), value, dtype=x.dtype))


def apply_kernel(smap: SamplingMap, params: ARConvParams, x: Tensor) -> Tensor:
    """Run the centre-cropped kernel over an expanded sample plane.

    The stride equals the point count, so each output pixel consumes
    exactly its own tile.  Applies the affine modulation unless ablated.
    """
    spec = smap.spec
    sub = sk_center(params.sk, spec.k_h, spec.k_w)
    kern = ConvKernel(sub, params.sk_bias, stride=(spec.k_h, spec.k_w), padding=0)
    y = conv2d(smap.s, kern)
    if params.at:
        m, b = affine_maps(x, params)
        y = y * m + b
    return y


def _forward_parts(x: Tensor, params: ARConvParams,
                   spec: KernelSpec | None = None):
    """Shared forward: returns (y, spec, hw or None)."""
    if not params.hwa:
        spec = spec or params.fixed_spec
        hw = None
        h = _const_extent(x, float(spec.k_h))
        w = _const_extent(x, float(spec.k_w))
    else:
        hw = learn_hw(x, params)
        if spec is None:
            spec = (select_points(hw, params.n, params.m, params.k_max)
                    if params.nspa else params.fixed_spec)
        h, w = hw.h, hw.w

    N, _, H, W = x.shape
    cols = sample_cols(x, h, w, spec)
    sub = sk_center(params.sk, spec.k_h, spec.k_w)
    rows = _linear_rows(cols, sub, params.sk_bias)
    y = _rows_to_image(rows, N, H, W)
    if params.at:
        m, b = affine_maps(x, params)
        y = y * m + b
    return y, spec, hw


def arconv_forward(x: Tensor, params: ARConvParams,
                   spec: KernelSpec | None = None) -> Tensor:
    """Full layer: learn extents, pick points, sample, convolve, modulate.

    ``spec`` forces the point count (used once specs are frozen); the
    extents stay learned either way.  Equivalent to building the
    expanded plane and calling :func:`apply_kernel`, but skips the
    intermediate layout.
    """
    y, _, _ = _forward_parts(x, params, spec)
    return y


class ARConvLayer:
    """One layer instance with selection state and logging hooks."""

    def __init__(self, params: ARConvParams, name: str = "arconv"):
        self.params = params
        self.name = name
        self.frozen_spec: KernelSpec | None = None
        self.last_spec: KernelSpec | None = None
        self.collect_maps = False
        self.last_hw: tuple[np.ndarray, np.ndarray] | None = None

    def forward(self, x: Tensor) -> Tensor:
        y, spec, hw = _forward_parts(x, self.params, self.frozen_spec)
        self.last_spec = spec
        if self.collect_maps:
            self.last_hw = None if hw is None else (hw.h.data.copy(), hw.w.data.copy())
        return y

    def freeze(self, spec: KernelSpec) -> None:
        if spec.k_h > self.params.k_max or spec.k_w > self.params.k_max:
            raise ConfigurationError(f"frozen spec {spec} exceeds k_max {self.params.k_max}")
        self.frozen_spec = spec

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return self.params.named_parameters(prefix)
