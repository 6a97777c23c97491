"""Synthetic multispectral scenes and reduced-resolution sample triples.

A scene renders to a ground-truth image; blurring, 4x area decimation
and a band mean then produce the (pan, lrms_low, gt) inputs, so the
original acts as its own reference.  Samples live on disk as a
manifest.json plus one raw little-endian float32 planar file each.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

GAUSS_SIGMA = 1.7
DATASET_MAGIC = b"ARDS0001"
_MAX_DIM = 16384
_MAX_BANDS = 256
_MAX_COUNT = 1_000_000


# ---------------------------------------------------------------- scenes

@dataclass(frozen=True)
class SceneObject:
    """One painted shape; rect anchors top-left, disk anchors centre."""

    kind: str
    y: int
    x: int
    size_y: int  # rect edge / disk radius
    size_x: int
    reflectance: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("rect", "disk"):
            raise ConfigurationError(f"unknown object kind {self.kind!r}")
        if self.size_y < 1 or self.size_x < 1:
            raise ConfigurationError(
                f"object sizes must be >= 1, got {self.size_y}x{self.size_x}")
        for r in self.reflectance:
            if not (0.0 <= r <= 1.0):
                raise ConfigurationError(f"reflectance {r} outside [0, 1]")

    def mask(self, height: int, width: int) -> np.ndarray:
        m = np.zeros((height, width), dtype=bool)
        if self.kind == "rect":
            m[self.y:self.y + self.size_y, self.x:self.x + self.size_x] = True
        else:
            yy, xx = np.mgrid[0:height, 0:width]
            d = ((yy - self.y) / self.size_y) ** 2 + ((xx - self.x) / self.size_x) ** 2
            m[d <= 1.0] = True
        return m

    def inside(self, height: int, width: int) -> bool:
        if self.kind == "rect":
            return (self.y >= 0 and self.x >= 0
                    and self.y + self.size_y <= height
                    and self.x + self.size_x <= width)
        return (self.y - self.size_y >= 0 and self.y + self.size_y <= height - 1
                and self.x - self.size_x >= 0 and self.x + self.size_x <= width - 1)

    def to_json(self) -> dict:
        return {"kind": self.kind, "y": self.y, "x": self.x,
                "size_y": self.size_y, "size_x": self.size_x,
                "reflectance": list(self.reflectance)}


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one ground-truth image."""

    height: int
    width: int
    bands: int
    background: tuple[float, ...]
    objects: tuple[SceneObject, ...] = ()
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.bands not in (4, 8):
            raise ConfigurationError(f"band count must be 4 or 8, got {self.bands}")
        if self.height < 1 or self.width < 1:
            raise ConfigurationError(
                f"scene extent must be positive, got {self.height}x{self.width}")
        if len(self.background) != self.bands:
            raise ConfigurationError(
                f"background has {len(self.background)} entries for {self.bands} bands")
        for v in self.background:
            if not (0.0 <= v <= 1.0):
                raise ConfigurationError(f"background level {v} outside [0, 1]")
        if self.noise < 0:
            raise ConfigurationError(f"noise level must be >= 0, got {self.noise}")
        for obj in self.objects:
            if len(obj.reflectance) != self.bands:
                raise ConfigurationError(
                    f"object reflectance has {len(obj.reflectance)} entries "
                    f"for {self.bands} bands")
            if not obj.inside(self.height, self.width):
                raise ConfigurationError(
                    f"{obj.kind} at ({obj.y}, {obj.x}) size "
                    f"{obj.size_y}x{obj.size_x} leaves the "
                    f"{self.height}x{self.width} canvas")


def synth_scene(spec: SceneSpec) -> np.ndarray:
    """Render to (C, H, W) float64.  Noise may push values past [0, 1];
    clamping happens (and is counted) when samples are materialised."""
    img = np.empty((spec.bands, spec.height, spec.width), dtype=np.float64)
    for b, v in enumerate(spec.background):
        img[b] = v
    for obj in spec.objects:
        m = obj.mask(spec.height, spec.width)
        for b, r in enumerate(obj.reflectance):
            img[b][m] = r
    if spec.noise > 0:
        # One shared texture field rather than per-band draws: band-wise
        # independent noise is invisible to the band mean and so cannot
        # be recovered from the pan side at all, while correlated
        # micro-texture behaves like real albedo variation.  It also
        # keeps flat regions off exact l1 ties.
        rng = np.random.default_rng([spec.seed, 7])
        img += rng.normal(0.0, spec.noise, size=(spec.height, spec.width))
    return img


def _spectral_levels(rng: np.random.Generator, bands: int,
                     spread: float = 0.1) -> tuple[float, ...]:
    # Shared brightness plus a small per-band offset, like co-registered
    # sensor bands.  Independent per-band draws would fill the scene
    # with metamers whose edges cancel in the band mean, leaving the
    # pan channel blind to most of the detail it is supposed to carry.
    lum = float(rng.uniform(0.08, 0.92))
    dev = rng.uniform(-spread, spread, size=bands)
    return tuple(float(np.clip(lum + d, 0.0, 1.0)) for d in dev)


def random_scene(rng: np.random.Generator, height: int, width: int, bands: int,
                 num_objects: int = 12, noise: float = 0.0,
                 seed: int = 0) -> SceneSpec:
    """Draw a scene whose object sizes span small to large."""
    side = min(height, width)
    objects = []
    for i in range(num_objects):
        # Log-uniform sizes cover the small end densely while still
        # producing objects a third of the canvas across.
        lo, hi = np.log(3.0), np.log(max(4.0, side / 3.0))
        sy = int(round(float(np.exp(rng.uniform(lo, hi)))))
        sx = int(round(float(np.exp(rng.uniform(lo, hi)))))
        refl = _spectral_levels(rng, bands)
        if rng.integers(2) == 0:
            y = int(rng.integers(0, height - sy + 1))
            x = int(rng.integers(0, width - sx + 1))
            objects.append(SceneObject("rect", y, x, sy, sx, refl))
        else:
            ry, rx = max(1, sy // 2), max(1, sx // 2)
            y = int(rng.integers(ry, height - 1 - ry + 1))
            x = int(rng.integers(rx, width - 1 - rx + 1))
            objects.append(SceneObject("disk", y, x, ry, rx, refl))
    background = _spectral_levels(rng, bands)
    return SceneSpec(height, width, bands, background, tuple(objects),
                     noise=noise, seed=seed)


# ------------------------------------------------- degradation pipeline

def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalised taps out to int(4*sigma + 0.5)."""
    if sigma <= 0:
        raise ConfigurationError(f"blur sigma must be positive, got {sigma}")
    radius = int(4.0 * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def gaussian_blur(img: np.ndarray, sigma: float = GAUSS_SIGMA) -> np.ndarray:
    """Separable blur over the last two axes with reflect padding."""
    w = gaussian_kernel1d(sigma)
    r = len(w) // 2
    for axis in (-2, -1):
        n = img.shape[axis]
        if n < r + 1:
            raise DataError(
                f"extent {n} too small for blur radius {r} (sigma {sigma})")
        pad = [(0, 0)] * img.ndim
        pad[axis] = (r, r)
        padded = np.pad(img.astype(np.float64, copy=False), pad, mode="reflect")
        out = np.zeros(img.shape, dtype=np.float64)
        sl = [slice(None)] * img.ndim
        for i, wi in enumerate(w):
            sl[axis] = slice(i, i + n)
            out += wi * padded[tuple(sl)]
        img = out
    return img


def area_decimate(img: np.ndarray, factor: int = 4) -> np.ndarray:
    """Top-left anchored factor x factor block means over the last two axes."""
    h, w = img.shape[-2:]
    if h % factor or w % factor:
        raise DataError(
            f"extent {h}x{w} not divisible by the decimation factor {factor}")
    shape = img.shape[:-2] + (h // factor, factor, w // factor, factor)
    return img.astype(np.float64, copy=False).reshape(shape).mean(axis=(-3, -1))


def pan_from(gt: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Band mean (1, H, W); weights default to uniform and must sum to 1."""
    c = gt.shape[0]
    if weights is None:
        weights = np.full(c, 1.0 / c, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (c,):
        raise ConfigurationError(
            f"need {c} band weights, got shape {weights.shape}")
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ConfigurationError(
            f"band weights must sum to 1, got {float(weights.sum())!r}")
    return np.tensordot(weights, gt.astype(np.float64, copy=False), axes=(0, 0))[None]


@dataclass
class SampleTriple:
    """One supervised sample; lrms_low sits at exactly 1/factor scale."""

    pan: np.ndarray        # (1, H, W)
    lrms_low: np.ndarray   # (C, H/factor, W/factor)
    gt: np.ndarray         # (C, H, W)
    factor: int = 4

    def __post_init__(self):
        c, h, w = self.gt.shape
        if self.pan.shape != (1, h, w):
            raise DataError(
                f"pan shape {self.pan.shape} does not match gt {self.gt.shape}")
        if h % self.factor or w % self.factor:
            raise DataError(
                f"gt extent {h}x{w} not divisible by factor {self.factor}")
        expect = (c, h // self.factor, w // self.factor)
        if self.lrms_low.shape != expect:
            raise DataError(
                f"lrms_low shape {self.lrms_low.shape}, expected {expect}")
        for name, arr in (("pan", self.pan), ("lrms_low", self.lrms_low),
                          ("gt", self.gt)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")


def wald_degrade(gt: np.ndarray, sigma: float = GAUSS_SIGMA, factor: int = 4,
                 weights: np.ndarray | None = None) -> SampleTriple:
    """Blur + decimate for lrms_low, band mean for pan; gt passes through.

    Purely linear, so superposition holds; inputs in [0, 1] stay there
    because every output value is a convex combination.
    """
    if gt.ndim != 3:
        raise DataError(f"gt must be (C, H, W), got shape {gt.shape}")
    gt64 = gt.astype(np.float64, copy=False)
    lrms_low = area_decimate(gaussian_blur(gt64, sigma), factor)
    return SampleTriple(pan_from(gt64, weights), lrms_low, gt64, factor)


# ---------------------------------------------------------------- disk IO

@dataclass
class Dataset:
    """All samples of one directory, stacked; arrays are float32."""

    pan: np.ndarray        # (K, 1, H, W)
    lrms_low: np.ndarray   # (K, C, H/f, W/f)
    gt: np.ndarray         # (K, C, H, W)
    factor: int
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.gt.shape[0]

    @property
    def bands(self) -> int:
        return self.gt.shape[1]


def _clamp_count(arr: np.ndarray) -> int:
    return int(np.count_nonzero((arr < 0.0) | (arr > 1.0)))


def write_dataset(path, triples: list[SampleTriple], *, bands: int, height: int,
                  width: int, factor: int = 4, extra: dict | None = None,
                  sample_meta: list[dict] | None = None) -> dict:
    """Write manifest.json + one raw file per sample; returns the manifest.

    Values outside [0, 1] are clamped and the count recorded per sample.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if sample_meta is not None and len(sample_meta) != len(triples):
        raise ConfigurationError(
            f"{len(sample_meta)} metadata entries for {len(triples)} samples")
    entries = []
    for i, t in enumerate(triples):
        if t.gt.shape != (bands, height, width) or t.factor != factor:
            raise DataError(
                f"sample {i} shape {t.gt.shape} factor {t.factor} does not "
                f"match dataset ({bands}, {height}, {width}) factor {factor}")
        clamped = _clamp_count(t.pan) + _clamp_count(t.lrms_low) + _clamp_count(t.gt)
        name = f"sample_{i:05d}.raw"
        with open(out / name, "wb") as fh:
            fh.write(DATASET_MAGIC)
            for arr in (t.pan, t.lrms_low, t.gt):
                plane = np.clip(arr, 0.0, 1.0).astype("<f4")
                fh.write(np.ascontiguousarray(plane).tobytes())
        entry = {"file": name, "clamped": clamped}
        if sample_meta is not None:
            entry.update(sample_meta[i])
        entries.append(entry)
    manifest = {
        "magic": "ARDS", "version": 1, "count": len(triples),
        "bands": bands, "height": height, "width": width, "factor": factor,
        "dtype": "float32", "endianness": "little", "samples": entries,
    }
    if extra:
        manifest["extra"] = extra
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def read_dataset(path) -> Dataset:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"no manifest.json under {root}")
    with open(mpath) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataError(f"manifest.json is not valid JSON: {e}") from None
    for key in ("magic", "version", "count", "bands", "height", "width",
                "factor", "dtype", "endianness", "samples"):
        if key not in manifest:
            raise DataError(f"manifest.json missing key {key!r}")
    if manifest["magic"] != "ARDS" or manifest["version"] != 1:
        raise DataError(
            f"unsupported manifest magic/version "
            f"{manifest['magic']!r}/{manifest['version']!r}")
    if manifest["dtype"] != "float32" or manifest["endianness"] != "little":
        raise DataError(
            f"unsupported sample encoding {manifest['dtype']}/"
            f"{manifest['endianness']}")
    c, h, w = manifest["bands"], manifest["height"], manifest["width"]
    factor, count = manifest["factor"], manifest["count"]
    if not (1 <= c <= _MAX_BANDS and 1 <= h <= _MAX_DIM and 1 <= w <= _MAX_DIM):
        raise DataError(f"dimension overflow: bands={c} extent={h}x{w}")
    if not (0 <= count <= _MAX_COUNT):
        raise DataError(f"dimension overflow: count={count}")
    if factor < 1 or h % factor or w % factor:
        raise DataError(f"extent {h}x{w} incompatible with factor {factor}")
    if len(manifest["samples"]) != count:
        raise DataError(
            f"manifest count {count} but {len(manifest['samples'])} sample entries")
    hl, wl = h // factor, w // factor
    sizes = (1 * h * w, c * hl * wl, c * h * w)
    expect = len(DATASET_MAGIC) + 4 * sum(sizes)
    pan = np.empty((count, 1, h, w), dtype=np.float32)
    lrms = np.empty((count, c, hl, wl), dtype=np.float32)
    gt = np.empty((count, c, h, w), dtype=np.float32)
    for i, entry in enumerate(manifest["samples"]):
        fpath = root / entry["file"]
        blob = fpath.read_bytes()
        if len(blob) != expect:
            raise DataError(
                f"{entry['file']}: {len(blob)} bytes, expected {expect}")
        if blob[:len(DATASET_MAGIC)] != DATASET_MAGIC:
            raise DataError(f"{entry['file']}: bad magic at offset 0")
        off = len(DATASET_MAGIC)
        planes = []
        for n in sizes:
            planes.append(np.frombuffer(blob, dtype="<f4", count=n, offset=off))
            off += 4 * n
        pan[i] = planes[0].reshape(1, h, w)
        lrms[i] = planes[1].reshape(c, hl, wl)
        gt[i] = planes[2].reshape(c, h, w)
    return Dataset(pan, lrms, gt, factor, manifest)


# ------------------------------------------------------------- png export

def save_png(path, img: np.ndarray) -> None:
    """8-bit PNG from a (H, W) or (3, H, W) array already in [0, 1]."""
    from PIL import Image

    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 3:
        if arr.shape[0] != 3:
            raise ConfigurationError(
                f"composite must have 3 bands, got {arr.shape[0]}")
        arr = np.moveaxis(arr, 0, -1)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data).save(str(path))


def export_composite(path, img: np.ndarray, bands: tuple[int, ...] | None = None):
    """Min-max stretch up to three bands into a PNG; the per-band stretch
    lands in a JSON sidecar next to it."""
    if img.ndim != 3:
        raise ConfigurationError(f"need (C, H, W), got shape {img.shape}")
    c = img.shape[0]
    if bands is None:
        bands = tuple(range(min(3, c)))
    if any(b < 0 or b >= c for b in bands) or len(bands) not in (1, 3):
        raise ConfigurationError(f"band selection {bands} invalid for {c} bands")
    stretch = []
    planes = []
    for b in bands:
        plane = img[b].astype(np.float64)
        lo, hi = float(plane.min()), float(plane.max())
        scaled = np.zeros_like(plane) if hi == lo else (plane - lo) / (hi - lo)
        stretch.append({"band": b, "min": lo, "max": hi})
        planes.append(scaled)
    out = planes[0] if len(planes) == 1 else np.stack(planes)
    save_png(path, out)
    sidecar = Path(path).with_suffix(".json")
    with open(sidecar, "w") as fh:
        json.dump({"bands": list(bands), "stretch": stretch}, fh, indent=1)
        fh.write("\n")
