"""Self-contained sequential colormap for heatmap rendering.

A fixed dark-violet-to-yellow ramp (perceptually ordered, colorblind
safe) shipped as anchor data and expanded to a 256-entry lookup table,
so rendering needs no plotting dependency.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

# 16 anchors, evenly spaced in t.
_ANCHORS = np.array([
    (68, 1, 84),
    (72, 26, 108),
    (71, 47, 125),
    (65, 68, 135),
    (57, 86, 140),
    (49, 104, 142),
    (42, 120, 142),
    (35, 136, 142),
    (31, 152, 139),
    (34, 168, 132),
    (53, 183, 121),
    (84, 197, 104),
    (122, 209, 81),
    (165, 219, 54),
    (210, 226, 27),
    (253, 231, 37),
], dtype=np.float64)


def _build_lut() -> np.ndarray:
    t_anchor = np.linspace(0.0, 1.0, len(_ANCHORS))
    t_full = np.linspace(0.0, 1.0, 256)
    lut = np.stack(
        [np.interp(t_full, t_anchor, _ANCHORS[:, c]) for c in range(3)],
        axis=1)
    return np.round(lut).astype(np.uint8)


_LUT = _build_lut()


def map_to_rgb(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Map a 2-d field to (H, W, 3) uint8 through the ramp.

    ``lo``/``hi`` define the value range; out-of-range values saturate
    at the ramp ends rather than wrapping.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise DataError(f"expected a 2-d field, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise DataError("field contains non-finite values")
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise DataError(f"bad colormap range [{lo}, {hi}]")
    t = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    idx = np.round(t * 255.0).astype(np.intp)
    return _LUT[idx]
