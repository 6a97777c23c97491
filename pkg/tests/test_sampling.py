"""Fractional sampling against a brute-force bilinear reference."""

import numpy as np

from arconv.gradcheck import check_gradients
from arconv.sampling import (KernelSpec, build_sampling_map, cols_to_map,
                             map_to_cols, offset_grid, sample_cols)
from arconv.tensor import Tensor


def bilinear_ref(img, sy, sx):
    """One bilinear read with zero outside the image."""
    H, W = img.shape
    y0, x0 = int(np.floor(sy)), int(np.floor(sx))
    wy, wx = sy - y0, sx - x0
    acc = 0.0
    for dy, vy in ((0, (1 - wy)), (1, wy)):
        for dx, vx in ((0, (1 - wx)), (1, wx)):
            yy, xx = y0 + dy, x0 + dx
            if 0 <= yy < H and 0 <= xx < W:
                acc += vy * vx * img[yy, xx]
    return acc


def sample_ref(x, hm, wm, spec):
    """Loop form of the sampling op, row layout identical to sample_cols."""
    N, C, H, W = x.shape
    kh, kw = spec.k_h, spec.k_w
    cols = np.zeros((N * H * W, C * kh * kw), dtype=x.dtype)
    for n in range(N):
        for u in range(H):
            for v in range(W):
                g = offset_grid(spec, hm[n, u, v], wm[n, u, v])
                row = (n * H + u) * W + v
                for c in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            cols[row, c * kh * kw + i * kw + j] = bilinear_ref(
                                x[n, c], u + g[i, j, 0], v + g[i, j, 1])
    return cols


def random_case(rng, N=2, C=3, H=7, W=8, spec=KernelSpec(3, 3), lo=1.5, hi=6.0):
    x = rng.normal(size=(N, C, H, W))
    hm = rng.uniform(lo, hi, size=(N, H, W))
    wm = rng.uniform(lo, hi, size=(N, H, W))
    return x, hm, wm


class TestOffsets:
    def test_hand_computed_three_point_grid(self):
        g = offset_grid(KernelSpec(3, 3), 2.4, 4.8)
        assert np.allclose(g[:, 0, 0], [-0.8, 0.0, 0.8])
        assert np.allclose(g[0, :, 1], [-1.6, 0.0, 1.6])

    def test_grid_is_centred(self):
        rng = np.random.default_rng(0)
        for k in (1, 3, 5, 7):
            g = offset_grid(KernelSpec(k, k), rng.uniform(1, 20), rng.uniform(1, 20))
            assert abs(g[:, 0, 0].sum()) < 1e-12
            assert abs(g[0, :, 1].sum()) < 1e-12

    def test_extent_equal_to_points_gives_exact_integers(self):
        # The collapse case must hit the lattice without rounding fuzz.
        for k in (1, 3, 5, 7):
            g = offset_grid(KernelSpec(k, k), float(k), float(k))
            want = np.arange(k) - (k - 1) / 2.0
            assert np.array_equal(g[:, 0, 0], want)

    def test_grid_spans_the_extent(self):
        g = offset_grid(KernelSpec(5, 3), 10.0, 6.0)
        # Outermost samples sit half a cell inside the window edge.
        assert np.isclose(g[-1, 0, 0] - g[0, 0, 0], 10.0 * (5 - 1) / 5)
        assert np.isclose(g[0, -1, 1] - g[0, 0, 1], 6.0 * (3 - 1) / 3)


class TestSampleValues:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for spec in (KernelSpec(1, 1), KernelSpec(3, 3), KernelSpec(3, 5), KernelSpec(5, 1)):
            x, hm, wm = random_case(rng, spec=spec)
            got = sample_cols(Tensor(x), Tensor(hm[:, None]), Tensor(wm[:, None]), spec).data
            want = sample_ref(x, hm, wm, spec)
            assert np.max(np.abs(got - want)) < 1e-12

    def test_reproduces_bilinear_fields_interior(self):
        # On a plane a*u + b*v + c*u*v + d, interpolation is exact.
        rng = np.random.default_rng(2)
        H = W = 16
        uu, vv = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        a, b, c, d = 0.7, -0.3, 0.05, 2.0
        img = (a * uu + b * vv + c * uu * vv + d).astype(np.float64)
        x = img[None, None]
        spec = KernelSpec(3, 3)
        hm = rng.uniform(2.0, 6.0, size=(1, H, W))
        wm = rng.uniform(2.0, 6.0, size=(1, H, W))
        cols = sample_cols(Tensor(x), Tensor(hm[:, None]), Tensor(wm[:, None]), spec).data
        checked = 0
        for u in range(H):
            for v in range(W):
                g = offset_grid(spec, hm[0, u, v], wm[0, u, v])
                row = u * W + v
                for i in range(spec.k_h):
                    for j in range(spec.k_w):
                        sy, sx = u + g[i, j, 0], v + g[i, j, 1]
                        if 0 <= sy <= H - 1 and 0 <= sx <= W - 1:
                            want = a * sy + b * sx + c * sy * sx + d
                            assert abs(cols[row, i * 3 + j] - want) < 1e-12
                            checked += 1
        assert checked > 1000

    def test_partition_of_unity_on_constant_image(self):
        rng = np.random.default_rng(3)
        H = W = 12
        x = np.full((1, 1, H, W), 0.73)
        hm = rng.uniform(1.0, 4.0, size=(1, H, W))
        wm = rng.uniform(1.0, 4.0, size=(1, H, W))
        spec = KernelSpec(3, 3)
        cols = sample_cols(Tensor(x), Tensor(hm[:, None]), Tensor(wm[:, None]), spec).data
        for u in range(H):
            for v in range(W):
                g = offset_grid(spec, hm[0, u, v], wm[0, u, v])
                row = u * W + v
                for i in range(spec.k_h):
                    for j in range(spec.k_w):
                        sy, sx = u + g[i, j, 0], v + g[i, j, 1]
                        if 0 <= sy <= H - 1 and 0 <= sx <= W - 1:
                            assert abs(cols[row, i * 3 + j] - 0.73) < 1e-14

    def test_far_outside_reads_zero(self):
        x = np.ones((1, 1, 8, 8))
        hm = np.full((1, 8, 8), 60.0)
        wm = np.full((1, 8, 8), 60.0)
        cols = sample_cols(Tensor(x), Tensor(hm[:, None]), Tensor(wm[:, None]),
                           KernelSpec(3, 3)).data
        # Corner samples sit 20 pixels outside an 8-pixel image.
        assert cols[0, 0] == 0.0

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        x, hm, wm = random_case(rng)
        args = (Tensor(x), Tensor(hm[:, None]), Tensor(wm[:, None]), KernelSpec(3, 3))
        assert np.array_equal(sample_cols(*args).data, sample_cols(*args).data)


class TestSampleGradients:
    def margin(self, hm, wm, spec, H, W):
        """Distance of the nearest moving sample to a cell edge.

        Centre samples of an odd grid sit on the lattice by construction
        and never move with the extents, so they do not count.
        """
        worst = 1.0
        for (n, u, v), h0 in np.ndenumerate(hm):
            g = offset_grid(spec, h0, wm[n, u, v])
            for i in range(spec.k_h):
                if 2 * i + 1 == spec.k_h:
                    continue
                fy = (u + g[i, 0, 0]) % 1.0
                worst = min(worst, abs(fy), abs(1 - fy))
            for j in range(spec.k_w):
                if 2 * j + 1 == spec.k_w:
                    continue
                fx = (v + g[0, j, 1]) % 1.0
                worst = min(worst, abs(fx), abs(1 - fx))
        return worst

    def test_gradients_match_differences(self):
        rng = np.random.default_rng(5)
        spec = KernelSpec(3, 3)
        N, C, H, W = 1, 2, 6, 6
        while True:
            x, hm, wm = random_case(rng, N=N, C=C, H=H, W=W, lo=1.7, hi=4.3)
            if self.margin(hm, wm, spec, H, W) > 1e-3:
                break
        xt = Tensor(x, requires_grad=True)
        ht = Tensor(hm[:, None], requires_grad=True)
        wt = Tensor(wm[:, None], requires_grad=True)
        p = Tensor(rng.normal(size=(N * H * W, C * 9)))
        err = check_gradients(lambda: (sample_cols(xt, ht, wt, spec) * p).sum(),
                              [xt, ht, wt], step=1e-5, floor=1e-6)
        assert err < 1e-4

    def test_x_gradient_is_exact_adjoint(self):
        # Value is linear in x, so a big step loses nothing.
        rng = np.random.default_rng(6)
        spec = KernelSpec(3, 5)
        x, hm, wm = random_case(rng, N=1, C=1, H=6, W=6)
        xt = Tensor(x, requires_grad=True)
        p = Tensor(rng.normal(size=(36, 15)))
        err = check_gradients(lambda: (sample_cols(
            xt, Tensor(hm[:, None]), Tensor(wm[:, None]), spec) * p).sum(),
            [xt], step=1e-3)
        assert err < 1e-8


class TestMapLayout:
    def test_expanded_plane_tiles_by_pixel(self):
        rng = np.random.default_rng(7)
        spec = KernelSpec(3, 3)
        x, hm, wm = random_case(rng, N=1, C=2, H=5, W=4)
        xt = Tensor(x)
        smap = build_sampling_map(xt, Tensor(hm[:, None]), Tensor(wm[:, None]), spec)
        assert smap.s.shape == (1, 2, 15, 12)
        cols = sample_cols(xt, Tensor(hm[:, None]), Tensor(wm[:, None]), spec).data
        for u in range(5):
            for v in range(4):
                for c in range(2):
                    for i in range(3):
                        for j in range(3):
                            assert smap.s.data[0, c, u * 3 + i, v * 3 + j] == \
                                cols[u * 4 + v, c * 9 + i * 3 + j]

    def test_round_trip(self):
        rng = np.random.default_rng(8)
        spec = KernelSpec(5, 3)
        x, hm, wm = random_case(rng, N=2, C=3, H=4, W=4)
        cols = sample_cols(Tensor(x), Tensor(hm[:, None]), Tensor(wm[:, None]), spec)
        s = cols_to_map(cols, 2, 3, 4, 4, spec)
        back = map_to_cols(s, spec)
        assert np.array_equal(back.data, cols.data)
