"""Compiled inner loops: window extraction and fractional sampling.

All loops run single-threaded in a fixed order, so every result is
bit-reproducible.  Per-channel partial sums for the extent gradients
are reduced by the caller in a fixed order as well.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xp, kh, kw, sh, sw, Ho, Wo, cols):
    """Copy sliding windows of a padded (N,C,Hp,Wp) array into rows.

    ``cols`` has shape (N*Ho*Wo, C*kh*kw); row (n,i,j) holds the window
    at stride offset (i*sh, j*sw), channel-major then row-major.
    """
    N, C, Hp, Wp = xp.shape
    for n in range(N):
        for i in range(Ho):
            ib = i * sh
            for j in range(Wo):
                jb = j * sw
                row = (n * Ho + i) * Wo + j
                r = 0
                for c in range(C):
                    for a in range(kh):
                        for b in range(kw):
                            cols[row, r] = xp[n, c, ib + a, jb + b]
                            r += 1


@njit(cache=True)
def col2im(cols, N, C, kh, kw, sh, sw, Ho, Wo, out):
    """Adjoint of :func:`im2col`: scatter-add rows back onto (N,C,Hp,Wp).

    Row-major over rows so each cols row is read contiguously; the
    per-channel output planes are small enough to stay cached.
    """
    for n in range(N):
        for i in range(Ho):
            ib = i * sh
            for j in range(Wo):
                jb = j * sw
                row = (n * Ho + i) * Wo + j
                r = 0
                for c in range(C):
                    for a in range(kh):
                        for b in range(kw):
                            out[n, c, ib + a, jb + b] += cols[row, r]
                            r += 1


@njit(cache=True)
def stage_offsets(hmap, wmap, kh, kw, y0s, wys, x0s, wxs):
    """Resolve per-position sample coordinates.

    For pixel (u, v) with learned window extent (h0, w0), sample row i of
    kh sits at u + (2i + 1 - kh) * h0 / (2 kh); columns likewise.  The
    numerator is formed before the division so that integer-valued
    offsets (the h0 == kh case) come out exact.  Stores floor cell index
    and fractional weight per sample row/column.
    """
    N, H, W = hmap.shape
    for p in range(N * H * W):
        n = p // (H * W)
        rem = p - n * (H * W)
        u = rem // W
        v = rem - u * W
        h0 = hmap[n, u, v]
        w0 = wmap[n, u, v]
        for i in range(kh):
            sy = u + ((2 * i + 1 - kh) * h0) / (2.0 * kh)
            fy = math.floor(sy)
            y0s[p, i] = int(fy)
            wys[p, i] = sy - fy
        for j in range(kw):
            sx = v + ((2 * j + 1 - kw) * w0) / (2.0 * kw)
            fx = math.floor(sx)
            x0s[p, j] = int(fx)
            wxs[p, j] = sx - fx


@njit(cache=True)
def sample_forward(x, y0s, wys, x0s, wxs, kh, kw, cols):
    """Bilinear-sample kh*kw points per position into im2col row layout.

    Points outside the image read as zero.  ``cols`` is
    (N*H*W, C*kh*kw) with the same column order as :func:`im2col`.
    """
    N, C, H, W = x.shape
    HW = H * W
    khw = kh * kw
    for c in range(C):
        cbase = c * khw
        for p in range(N * HW):
            n = p // HW
            xc = x[n, c]
            # All four corners of every sample in-bounds: skip the checks.
            inside = (y0s[p, 0] >= 0 and y0s[p, kh - 1] + 1 < H
                      and x0s[p, 0] >= 0 and x0s[p, kw - 1] + 1 < W)
            if inside:
                for i in range(kh):
                    y0 = y0s[p, i]
                    wy = wys[p, i]
                    for j in range(kw):
                        x0 = x0s[p, j]
                        wx = wxs[p, j]
                        v00 = xc[y0, x0]
                        v01 = xc[y0, x0 + 1]
                        v10 = xc[y0 + 1, x0]
                        v11 = xc[y0 + 1, x0 + 1]
                        cols[p, cbase + i * kw + j] = (
                            (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                            + wy * ((1.0 - wx) * v10 + wx * v11))
            else:
                for i in range(kh):
                    y0 = y0s[p, i]
                    wy = wys[p, i]
                    ok0 = 0 <= y0 < H
                    ok1 = 0 <= y0 + 1 < H
                    for j in range(kw):
                        x0 = x0s[p, j]
                        wx = wxs[p, j]
                        okl = 0 <= x0 < W
                        okr = 0 <= x0 + 1 < W
                        v00 = xc[y0, x0] if ok0 and okl else 0.0
                        v01 = xc[y0, x0 + 1] if ok0 and okr else 0.0
                        v10 = xc[y0 + 1, x0] if ok1 and okl else 0.0
                        v11 = xc[y0 + 1, x0 + 1] if ok1 and okr else 0.0
                        cols[p, cbase + i * kw + j] = (
                            (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                            + wy * ((1.0 - wx) * v10 + wx * v11))


@njit(cache=True)
def sample_backward(gcols, x, y0s, wys, x0s, wxs, kh, kw, coefy, coefx,
                    gx, gh_part, gw_part):
    """Backward pass of :func:`sample_forward`.

    Accumulates into gx (N,C,H,W) and per-channel partials gh_part,
    gw_part of shape (C, N*H*W); the caller reduces over channels.
    Gradients of samples falling outside the image are dropped, matching
    the zero-padding in the forward pass.
    """
    N, C, H, W = x.shape
    HW = H * W
    khw = kh * kw
    for c in range(C):
        cbase = c * khw
        for p in range(N * HW):
            n = p // HW
            xc = x[n, c]
            gxc = gx[n, c]
            acc_h = 0.0
            acc_w = 0.0
            for i in range(kh):
                y0 = y0s[p, i]
                wy = wys[p, i]
                ok0 = 0 <= y0 < H
                ok1 = 0 <= y0 + 1 < H
                for j in range(kw):
                    g = gcols[p, cbase + i * kw + j]
                    x0 = x0s[p, j]
                    wx = wxs[p, j]
                    okl = 0 <= x0 < W
                    okr = 0 <= x0 + 1 < W
                    v00 = xc[y0, x0] if ok0 and okl else 0.0
                    v01 = xc[y0, x0 + 1] if ok0 and okr else 0.0
                    v10 = xc[y0 + 1, x0] if ok1 and okl else 0.0
                    v11 = xc[y0 + 1, x0 + 1] if ok1 and okr else 0.0
                    # Corner gradients.
                    if ok0 and okl:
                        gxc[y0, x0] += g * (1.0 - wy) * (1.0 - wx)
                    if ok0 and okr:
                        gxc[y0, x0 + 1] += g * (1.0 - wy) * wx
                    if ok1 and okl:
                        gxc[y0 + 1, x0] += g * wy * (1.0 - wx)
                    if ok1 and okr:
                        gxc[y0 + 1, x0 + 1] += g * wy * wx
                    # Position gradients via the sample coordinates.
                    dvdy = (v10 - v00) * (1.0 - wx) + (v11 - v01) * wx
                    dvdx = (v01 - v00) * (1.0 - wy) + (v11 - v10) * wy
                    acc_h += g * dvdy * coefy[i]
                    acc_w += g * dvdx * coefx[j]
            gh_part[c, p] = acc_h
            gw_part[c, p] = acc_w
