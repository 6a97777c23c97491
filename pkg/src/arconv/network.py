"""Detail-injection fusion network built from adaptive layers.

A U-shaped body predicts a high-frequency detail plane from the
panchromatic image stacked with the upsampled spectral bands; the
output is that detail added back onto the upsampled bands.  Residual
blocks carry two adaptive layers each; with the default two
downsampling levels the body holds five blocks, ten adaptive layers in
encoder-to-decoder order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .conv import ConvKernel, conv2d, conv2d_transposed, conv_kernel
from .errors import ConfigurationError, DataError
from .layer import ARConvLayer, HWRange, arconv_params
from .sampling import KernelSpec
from .tensor import Tensor, concat


@dataclass
class ARNetConfig:
    """Architecture switches; everything here is JSON-serialisable."""

    bands: int
    base_channels: int = 32
    num_levels: int = 2
    hw_range: str | list[str] = "1-18"
    k_max: int = 7
    n: float | None = None
    m: float | None = None
    hwa: bool = True
    nspa: bool = True
    at: bool = True
    fixed_spec: tuple[int, int] = (3, 3)

    def __post_init__(self):
        if self.bands < 1:
            raise ConfigurationError(f"bands must be >= 1, got {self.bands}")
        if self.base_channels < 1:
            raise ConfigurationError(
                f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_levels < 1:
            raise ConfigurationError(
                f"num_levels must be >= 1, got {self.num_levels}")
        if self.k_max < 1 or self.k_max % 2 == 0:
            raise ConfigurationError(f"k_max must be odd >= 1, got {self.k_max}")
        for name in ("n", "m"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigurationError(f"{name} must be positive, got {v}")
        self.fixed_spec = tuple(self.fixed_spec)
        if len(self.fixed_spec) != 2 or any(
                k < 1 or k % 2 == 0 or k > self.k_max for k in self.fixed_spec):
            raise ConfigurationError(
                f"fixed_spec must be odd pairs within k_max={self.k_max}, "
                f"got {self.fixed_spec}")
        if isinstance(self.hw_range, list):
            if len(self.hw_range) != self.num_arconv_layers:
                raise ConfigurationError(
                    f"per-layer ranges need {self.num_arconv_layers} entries, "
                    f"got {len(self.hw_range)}")
            for label in self.hw_range:
                HWRange.from_label(label)
        else:
            HWRange.from_label(self.hw_range)

    @property
    def num_blocks(self) -> int:
        return 2 * self.num_levels + 1

    @property
    def num_arconv_layers(self) -> int:
        return 2 * self.num_blocks

    def range_for_layer(self, index: int) -> HWRange:
        if isinstance(self.hw_range, list):
            return HWRange.from_label(self.hw_range[index])
        return HWRange.from_label(self.hw_range)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ARNetConfig":
        return cls(**json.loads(text))


class _ResBlock:
    """x -> relu(x + ar2(relu(ar1(x))))."""

    def __init__(self, ar1: ARConvLayer, ar2: ARConvLayer):
        self.ar1 = ar1
        self.ar2 = ar2

    def forward(self, x: Tensor) -> Tensor:
        y = self.ar2.forward(self.ar1.forward(x).relu())
        return (x + y).relu()


class ARNet:
    """The fusion network; construction order fixes parameter order."""

    def __init__(self, config: ARNetConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        C = config.bands
        L = config.num_levels
        chans = [config.base_channels * (1 << lvl) for lvl in range(L + 1)]

        self.arconv_layers: list[ARConvLayer] = []
        self._params: list[tuple[str, Tensor]] = []

        def reg_kernel(name: str, kern: ConvKernel, with_bias: bool = True):
            self._params.append((f"{name}.weights", kern.weights))
            if with_bias:
                self._params.append((f"{name}.bias", kern.bias))
            return kern

        def make_block(name: str, ch: int) -> _ResBlock:
            layers = []
            for sub in ("ar1", "ar2"):
                idx = len(self.arconv_layers)
                r = config.range_for_layer(idx)
                params = arconv_params(
                    rng, ch, ch, r, r, k_max=config.k_max, n=config.n,
                    m=config.m, hwa=config.hwa, nspa=config.nspa,
                    at=config.at, fixed_spec=KernelSpec(*config.fixed_spec),
                    dtype=dtype)
                if sub == "ar2":
                    # Each block starts as an identity: with the second
                    # stored kernel at zero the residual branch contributes
                    # only B ~ 0.01, so relu(x + y) ~ x and the post-add
                    # relu cannot silence the block before it has learned
                    # anything.  The branch wakes up through the sk
                    # gradient, which stays nonzero (m ~ 1 times sampled x).
                    params.sk.data[:] = 0.0
                layer = ARConvLayer(params, name=f"{name}.{sub}")
                self.arconv_layers.append(layer)
                self._params.extend(params.named_parameters(f"{name}.{sub}."))
                layers.append(layer)
            return _ResBlock(*layers)

        self.stem = reg_kernel("stem", conv_kernel(
            rng, 1 + C, chans[0], 3, padding=1, dtype=dtype))
        self.enc_blocks = [make_block(f"enc{l}", chans[l]) for l in range(L)]
        self.downs = []
        for l in range(L):
            self.downs.append(reg_kernel(f"down{l}", conv_kernel(
                rng, chans[l], chans[l + 1], 3, stride=2, padding=1, dtype=dtype)))
        self.bottleneck = make_block("bott", chans[L])
        self.ups = []
        self.up_biases = []
        for l in range(L - 1, -1, -1):
            kern = conv_kernel(rng, chans[l], chans[l + 1], 2, stride=2,
                               padding=0, dtype=dtype)
            kern.bias.requires_grad = False  # transposed use only
            self.ups.append(reg_kernel(f"up{l}", kern, with_bias=False))
            tb = Tensor(np.zeros(chans[l], dtype=dtype), requires_grad=True)
            self.up_biases.append(tb)
            self._params.append((f"up{l}.bias", tb))
        self.fuses = []
        for l in range(L - 1, -1, -1):
            self.fuses.append(reg_kernel(f"fuse{l}", conv_kernel(
                rng, 2 * chans[l], chans[l], 1, dtype=dtype)))
        self.dec_blocks = [make_block(f"dec{l}", chans[l])
                           for l in range(L - 1, -1, -1)]
        self.head = reg_kernel("head", conv_kernel(
            rng, chans[0], C, 3, padding=1, dtype=dtype))
        # The detail branch starts at exactly zero (output == upsampled
        # bands), so training sculpts real detail from the first step.
        # With a noisy start the cheapest descent direction is suppressing
        # the noise, and the post-add relu obliges by dying permanently.
        self.head.weights.data[:] = 0.0

    # -- parameters ------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._params)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self._params]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    # -- selection state --------------------------------------------------
    def freeze(self, specs: list[KernelSpec]) -> None:
        if len(specs) != len(self.arconv_layers):
            raise ConfigurationError(
                f"need {len(self.arconv_layers)} specs, got {len(specs)}")
        for layer, spec in zip(self.arconv_layers, specs):
            layer.freeze(spec)

    @property
    def frozen(self) -> bool:
        return all(l.frozen_spec is not None for l in self.arconv_layers)

    def frozen_specs(self) -> list[KernelSpec] | None:
        if not self.frozen:
            return None
        return [l.frozen_spec for l in self.arconv_layers]

    def last_specs(self) -> list[KernelSpec]:
        return [l.last_spec for l in self.arconv_layers]

    def set_collect_maps(self, enabled: bool) -> None:
        for l in self.arconv_layers:
            l.collect_maps = enabled

    # -- forward -----------------------------------------------------------
    def forward(self, pan: Tensor, lrms_up: Tensor) -> Tensor:
        """Fuse one batch: pan (N,1,H,W) + upsampled bands (N,C,H,W)."""
        C = self.config.bands
        if pan.ndim != 4 or pan.shape[1] != 1:
            raise ConfigurationError(f"pan must be (N,1,H,W), got {pan.shape}")
        if lrms_up.ndim != 4 or lrms_up.shape[1] != C:
            raise ConfigurationError(
                f"bands input must be (N,{C},H,W), got {lrms_up.shape}")
        if pan.shape[0] != lrms_up.shape[0] or pan.shape[2:] != lrms_up.shape[2:]:
            raise ConfigurationError(
                f"pan {pan.shape} and bands {lrms_up.shape} extents differ")
        H, W = pan.shape[2], pan.shape[3]
        div = 1 << self.config.num_levels
        if H % div or W % div:
            raise ConfigurationError(
                f"input extent {H}x{W} must be divisible by {div}")
        if pan.dtype != self.dtype or lrms_up.dtype != self.dtype:
            raise ConfigurationError(
                f"inputs must be {self.dtype}, got {pan.dtype}/{lrms_up.dtype}")

        x = conv2d(concat([pan, lrms_up], axis=1), self.stem).relu()
        skips = []
        for block, down in zip(self.enc_blocks, self.downs):
            x = block.forward(x)
            skips.append(x)
            x = conv2d(x, down).relu()
        x = self.bottleneck.forward(x)
        for up, tb, fuse, block, skip in zip(self.ups, self.up_biases,
                                             self.fuses, self.dec_blocks,
                                             reversed(skips)):
            x = conv2d_transposed(x, up, bias=tb)
            x = conv2d(concat([skip, x], axis=1), fuse)
            x = block.forward(x)
        detail = conv2d(x, self.head)
        return lrms_up + detail


def arnet_forward(net: ARNet, pan: Tensor, lrms_up: Tensor) -> Tensor:
    return net.forward(pan, lrms_up)


def upsample_lrms(lrms: np.ndarray, factor: int = 4) -> np.ndarray:
    """Separable 4-point cubic interpolation by an integer factor.

    Output pixel o reads input position (o + 0.5) / factor - 0.5, so
    pixel centres stay aligned.  The cubic through the 4 nearest points
    reproduces cubic polynomials exactly at interior positions; edges
    clamp to the border sample.
    """
    if lrms.ndim != 4:
        raise ConfigurationError(f"expected (N,C,h,w), got {lrms.shape}")
    if factor < 1:
        raise ConfigurationError(f"factor must be >= 1, got {factor}")

    def pass1d(x, axis):
        n_in = x.shape[axis]
        o = np.arange(n_in * factor)
        src = (o + 0.5) / factor - 0.5
        base = np.floor(src).astype(np.int64)
        t = src - base
        idx = [np.clip(base + d - 1, 0, n_in - 1) for d in range(4)]
        w = [-t * (t - 1) * (t - 2) / 6.0,
             (t + 1) * (t - 1) * (t - 2) / 2.0,
             -(t + 1) * t * (t - 2) / 2.0,
             (t + 1) * t * (t - 1) / 6.0]
        shape = [1] * x.ndim
        shape[axis] = len(o)
        acc = np.zeros(x.shape[:axis] + (len(o),) + x.shape[axis + 1:],
                       dtype=x.dtype)
        for d in range(4):
            acc += np.take(x, idx[d], axis=axis) * w[d].astype(x.dtype).reshape(shape)
        return acc

    return pass1d(pass1d(lrms, 2), 3)


# -- checkpoint container ---------------------------------------------------

_MAGIC = b"ARCK0001"
_VERSION = 1


@dataclass
class ARNetState:
    """Everything a resumed run needs."""

    net: ARNet
    epoch: int = 0
    extra: dict[str, np.ndarray] = field(default_factory=dict)


def _config_digest(config_json: str) -> bytes:
    return hashlib.sha256(config_json.encode("utf-8")).digest()


def save_checkpoint(path, net: ARNet, epoch: int = 0,
                    extra: dict[str, np.ndarray] | None = None) -> None:
    """Write a self-describing binary checkpoint.

    Layout: magic, version, flags, config JSON + digest, epoch, frozen
    spec list, then named parameter blobs as little-endian float32, then
    named extra arrays (optimiser state) the same way.
    """
    extra = extra or {}
    cfg_json = net.config.to_json()
    specs = net.frozen_specs() or []
    flags = (1 if net.frozen else 0) | (2 if extra else 0)

    def blob(name: str, arr: np.ndarray) -> bytes:
        data = np.ascontiguousarray(arr, dtype="<f4")
        head = struct.pack("<H", len(name.encode())) + name.encode()
        head += struct.pack("<B", data.ndim)
        head += b"".join(struct.pack("<I", d) for d in data.shape)
        return head + data.tobytes()

    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IB", _VERSION, flags))
        enc = cfg_json.encode("utf-8")
        fh.write(struct.pack("<I", len(enc)))
        fh.write(enc)
        fh.write(_config_digest(cfg_json))
        fh.write(struct.pack("<I", epoch))
        fh.write(struct.pack("<H", len(specs)))
        for s in specs:
            fh.write(struct.pack("<BB", s.k_h, s.k_w))
        params = net.named_parameters()
        fh.write(struct.pack("<I", len(params)))
        for name, t in params:
            fh.write(blob(name, t.data))
        fh.write(struct.pack("<I", len(extra)))
        for name in sorted(extra):
            fh.write(blob(name, extra[name]))


class _Reader:
    def __init__(self, path):
        try:
            with open(path, "rb") as fh:
                self.buf = fh.read()
        except OSError as e:
            raise DataError(f"cannot read checkpoint {path}: {e}") from None
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError(
                f"{self.path}: truncated at offset {self.pos}, "
                f"needed {n} more bytes of {len(self.buf)} total")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_blob(r: _Reader) -> tuple[str, np.ndarray]:
    (nlen,) = r.unpack("<H")
    name = r.take(nlen).decode("utf-8")
    (ndim,) = r.unpack("<B")
    dims = [r.unpack("<I")[0] for _ in range(ndim)]
    count = 1
    for d in dims:
        if d > 2 ** 31:
            raise DataError(f"{r.path}: dimension overflow at offset {r.pos}")
        count *= d
    if count > 2 ** 31:
        raise DataError(f"{r.path}: blob size overflow at offset {r.pos}")
    data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
    return name, data


def load_checkpoint(path) -> ARNetState:
    """Rebuild the network (float32) and optimiser arrays from a file."""
    r = _Reader(path)
    magic = r.take(8)
    if magic != _MAGIC:
        raise DataError(f"{path}: bad magic at offset 0: {magic!r}")
    version, flags = r.unpack("<IB")
    if version != _VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    (cfg_len,) = r.unpack("<I")
    cfg_json = r.take(cfg_len).decode("utf-8")
    digest = r.take(32)
    if digest != _config_digest(cfg_json):
        raise DataError(f"{path}: config digest mismatch at offset {r.pos - 32}")
    (epoch,) = r.unpack("<I")
    (n_specs,) = r.unpack("<H")
    specs = [KernelSpec(*r.unpack("<BB")) for _ in range(n_specs)]

    config = ARNetConfig.from_json(cfg_json)
    net = ARNet(config, np.random.default_rng(0), dtype=np.float32)
    (n_params,) = r.unpack("<I")
    expected = dict(net.named_parameters())
    seen = set()
    for _ in range(n_params):
        name, data = _read_blob(r)
        if name not in expected:
            raise DataError(f"{path}: unknown parameter {name!r}")
        t = expected[name]
        if tuple(data.shape) != tuple(t.shape):
            raise DataError(
                f"{path}: parameter {name!r} has shape {data.shape}, "
                f"expected {tuple(t.shape)}")
        t.data = data.astype(np.float32).copy()
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise DataError(f"{path}: missing parameters {sorted(missing)[:3]}")
    (n_extra,) = r.unpack("<I")
    extra = {}
    for _ in range(n_extra):
        name, data = _read_blob(r)
        extra[name] = data.astype(np.float32).copy()
    if flags & 1:
        net.freeze(specs)
    return ARNetState(net=net, epoch=epoch, extra=extra)
