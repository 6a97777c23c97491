"""Fusion quality metrics.

Reduced resolution (reference available): sam, ergas, q_avg.
Full resolution (no reference): d_lambda, d_s and their product hqnr.
Every statistic runs in 64-bit regardless of the input precision, and
the self-comparison cases come out exact: sam(x, x) == 0.0,
ergas(x, x) == 0.0, q_avg(x, x) == 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def _as64(name: str, arr: np.ndarray, ndim: int) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2 and ndim == 3:
        a = a[None]
    if a.ndim != ndim:
        raise DataError(f"{name} must have {ndim} axes, got shape {arr.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite values")
    return a


def _pair(fused, gt, names=("fused", "reference")) -> tuple[np.ndarray, np.ndarray]:
    f = _as64(names[0], fused, 3)
    g = _as64(names[1], gt, 3)
    if f.shape != g.shape:
        raise DataError(f"shape mismatch: {names[0]} {f.shape} vs "
                        f"{names[1]} {g.shape}")
    return f, g


# ------------------------------------------------------ reduced resolution

def sam_with_skips(fused: np.ndarray, gt: np.ndarray) -> tuple[float, int]:
    """Mean spectral angle in degrees plus the count of skipped pixels.

    A pixel is skipped when either spectrum has zero norm.  The angle is
    evaluated through the chord, 2*asin(|u - v|/2) for unit vectors u, v;
    identical to acos of the clamped dot product but exactly 0 for
    identical (or positively rescaled) spectra instead of picking up
    rounding at the edge of acos's domain.
    """
    f, g = _pair(fused, gt)
    c = f.shape[0]
    fv = f.reshape(c, -1)
    gv = g.reshape(c, -1)
    nf = np.sqrt((fv * fv).sum(axis=0))
    ng = np.sqrt((gv * gv).sum(axis=0))
    valid = (nf > 0) & (ng > 0)
    skipped = int(valid.size - np.count_nonzero(valid))
    if not valid.any():
        raise DataError("no valid pixels: every spectrum has zero norm")
    u = fv[:, valid] / nf[valid]
    v = gv[:, valid] / ng[valid]
    chord = np.sqrt(((u - v) ** 2).sum(axis=0))
    ang = 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))
    return float(np.degrees(ang.mean())), skipped


def sam(fused: np.ndarray, gt: np.ndarray) -> float:
    return sam_with_skips(fused, gt)[0]


def ergas(fused: np.ndarray, gt: np.ndarray, ratio: int = 4) -> float:
    """100/ratio * sqrt(mean over bands of (RMSE_b / mean_b)^2)."""
    f, g = _pair(fused, gt)
    if ratio < 1:
        raise DataError(f"ratio must be >= 1, got {ratio}")
    acc = 0.0
    for b in range(g.shape[0]):
        mu = float(g[b].mean())
        if mu == 0.0:
            raise DataError(f"reference band {b} has zero mean")
        rmse = math.sqrt(float(((f[b] - g[b]) ** 2).mean()))
        acc += (rmse / mu) ** 2
    return 100.0 / ratio * math.sqrt(acc / g.shape[0])


def _block_q(x: np.ndarray, y: np.ndarray, window: int) -> np.ndarray:
    """Q over non-overlapping window x window blocks of one band pair.

    Degenerate blocks (zero denominator) are dropped.  Numerator and
    denominator are written with identical operation shapes so x == y
    gives bitwise-equal values and Q exactly 1.
    """
    h, w = x.shape
    if h < window or w < window:
        raise DataError(
            f"image {h}x{w} smaller than the {window}x{window} quality window")
    nh, nw = h // window, w // window
    xb = x[:nh * window, :nw * window].reshape(nh, window, nw, window)
    yb = y[:nh * window, :nw * window].reshape(nh, window, nw, window)
    xb = xb.transpose(0, 2, 1, 3).reshape(nh * nw, -1)
    yb = yb.transpose(0, 2, 1, 3).reshape(nh * nw, -1)
    mx = xb.mean(axis=1)
    my = yb.mean(axis=1)
    dx = xb - mx[:, None]
    dy = yb - my[:, None]
    sxy = (dx * dy).mean(axis=1)
    sx2 = (dx * dx).mean(axis=1)
    sy2 = (dy * dy).mean(axis=1)
    mxy = mx * my
    mx2 = mx * mx
    my2 = my * my
    num = (sxy + sxy) * (mxy + mxy)
    den = (sx2 + sy2) * (mx2 + my2)
    keep = den != 0.0
    return num[keep] / den[keep]


def _band(name: str, arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise DataError(f"{name} must be a single band, got shape {arr.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite values")
    return a


def qindex(x: np.ndarray, y: np.ndarray, window: int = 32) -> float:
    """Mean block Q for one band pair."""
    x = _band("x", x)
    y = _band("y", y)
    if x.shape != y.shape:
        raise DataError(f"shape mismatch: {x.shape} vs {y.shape}")
    qs = _block_q(x, y, window)
    if qs.size == 0:
        raise DataError("all blocks are degenerate (zero denominator)")
    return float(qs.mean())


def q_avg(fused: np.ndarray, gt: np.ndarray, window: int = 32) -> float:
    """Band mean of block-averaged Q; degenerate blocks are skipped and
    bands with no usable block are dropped from the mean."""
    f, g = _pair(fused, gt)
    per_band = []
    for b in range(g.shape[0]):
        qs = _block_q(f[b], g[b], window)
        if qs.size:
            per_band.append(float(qs.mean()))
    if not per_band:
        raise DataError("all blocks of every band are degenerate")
    return float(np.mean(per_band))


# --------------------------------------------------------- full resolution

def d_lambda(fused: np.ndarray, lrms_low: np.ndarray, window: int = 32,
             ratio: int = 4) -> float:
    """Spectral distortion: mean |Q(F_b, F_c) - Q(L_b, L_c)| over band pairs,
    the low-resolution Q using a window shrunk by the scale ratio."""
    f = _as64("fused", fused, 3)
    low = _as64("lrms_low", lrms_low, 3)
    c = f.shape[0]
    if c < 2:
        raise DataError(f"spectral distortion needs >= 2 bands, got {c}")
    if low.shape[0] != c:
        raise DataError(
            f"band mismatch: fused has {c}, lrms_low has {low.shape[0]}")
    wlow = max(1, window // ratio)
    acc = 0.0
    pairs = 0
    for b in range(c):
        for d in range(b + 1, c):
            acc += abs(qindex(f[b], f[d], window) - qindex(low[b], low[d], wlow))
            pairs += 1
    return acc / pairs


def d_s(fused: np.ndarray, lrms_low: np.ndarray, pan: np.ndarray,
        pan_low: np.ndarray, window: int = 32, ratio: int = 4) -> float:
    """Spatial distortion: mean |Q(F_b, PAN) - Q(L_b, PAN_low)| over bands."""
    f = _as64("fused", fused, 3)
    low = _as64("lrms_low", lrms_low, 3)
    p = _as64("pan", pan, 3)[0]
    pl = _as64("pan_low", pan_low, 3)[0]
    c = f.shape[0]
    if low.shape[0] != c:
        raise DataError(
            f"band mismatch: fused has {c}, lrms_low has {low.shape[0]}")
    if p.shape != f.shape[1:]:
        raise DataError(f"pan {p.shape} does not match fused {f.shape[1:]}")
    if pl.shape != low.shape[1:]:
        raise DataError(f"pan_low {pl.shape} does not match lrms_low "
                        f"{low.shape[1:]}")
    wlow = max(1, window // ratio)
    acc = 0.0
    for b in range(c):
        acc += abs(qindex(f[b], p, window) - qindex(low[b], pl, wlow))
    return acc / c


def hqnr(d_lambda_value: float, d_s_value: float) -> float:
    """(1 - D_lambda) * (1 - D_s)."""
    for name, v in (("d_lambda", d_lambda_value), ("d_s", d_s_value)):
        if not math.isfinite(v):
            raise DataError(f"{name} is not finite: {v!r}")
    return (1.0 - d_lambda_value) * (1.0 - d_s_value)


# ----------------------------------------------------------------- report

@dataclass
class MetricReport:
    """Per-image metric values plus mean/std summaries."""

    dataset_id: str
    ratio: int
    window: int
    per_image: list[dict] = field(default_factory=list)

    def add(self, values: dict) -> None:
        self.per_image.append(values)

    def summary(self) -> dict:
        keys = sorted({k for row in self.per_image
                       for k, v in row.items() if isinstance(v, (int, float))})
        out = {}
        for k in keys:
            vals = np.array([row[k] for row in self.per_image if k in row],
                            dtype=np.float64)
            out[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out

    def to_json(self) -> dict:
        return {"dataset_id": self.dataset_id, "ratio": self.ratio,
                "window": self.window, "per_image": self.per_image,
                "summary": self.summary()}
