"""Quality metrics: exact self-comparisons plus brute-force block oracles."""

import numpy as np
import pytest

from arconv.errors import DataError
from arconv.metrics import (MetricReport, d_lambda, d_s, ergas, hqnr, q_avg,
                            qindex, sam, sam_with_skips)


def q_ref(x, y, window):
    """Straightforward per-block Q, the oracle for the vectorised path."""
    qs = []
    for by in range(x.shape[0] // window):
        for bx in range(x.shape[1] // window):
            xb = x[by * window:(by + 1) * window,
                   bx * window:(bx + 1) * window].ravel()
            yb = y[by * window:(by + 1) * window,
                   bx * window:(bx + 1) * window].ravel()
            mx, my = xb.mean(), yb.mean()
            sxy = ((xb - mx) * (yb - my)).mean()
            sx2 = ((xb - mx) ** 2).mean()
            sy2 = ((yb - my) ** 2).mean()
            den = (sx2 + sy2) * (mx * mx + my * my)
            if den == 0.0:
                continue
            qs.append(4.0 * sxy * mx * my / den)
    return float(np.mean(qs))


def replicate4(img):
    """Nearest-neighbour 4x upscale; block statistics survive exactly."""
    return np.repeat(np.repeat(img, 4, axis=-2), 4, axis=-1)


class TestSam:
    def test_identical_is_exactly_zero(self):
        x = np.random.default_rng(0).random((4, 32, 32))
        assert sam(x, x) == 0.0

    def test_positive_scaling_is_exactly_zero(self):
        x = np.random.default_rng(1).random((4, 16, 16)) + 0.1
        assert sam(2.0 * x, x) == 0.0

    def test_orthogonal_spectra_give_ninety_degrees(self):
        f = np.array([1.0, 0.0]).reshape(2, 1, 1)
        g = np.array([0.0, 1.0]).reshape(2, 1, 1)
        assert sam(f, g) == pytest.approx(90.0, abs=1e-10)

    def test_forty_five_degrees(self):
        f = np.array([1.0, 1.0]).reshape(2, 1, 1)
        g = np.array([1.0, 0.0]).reshape(2, 1, 1)
        assert sam(f, g) == pytest.approx(45.0, abs=1e-10)

    def test_zero_norm_pixels_skipped_and_counted(self):
        f = np.ones((2, 2, 2))
        g = np.ones((2, 2, 2))
        g[:, 0, 0] = 0.0
        value, skipped = sam_with_skips(f, g)
        assert skipped == 1
        assert value == 0.0

    def test_all_zero_rejected(self):
        z = np.zeros((3, 4, 4))
        with pytest.raises(DataError, match="no valid pixels"):
            sam(z, z)

    def test_shape_mismatch(self):
        with pytest.raises(DataError, match="shape"):
            sam(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))

    def test_non_finite_rejected(self):
        x = np.ones((2, 2, 2))
        y = x.copy()
        y[0, 0, 0] = np.nan
        with pytest.raises(DataError, match="non-finite"):
            sam(x, y)

    def test_mean_over_mixed_angles(self):
        # Two pixels: one aligned (0 deg), one orthogonal (90 deg).
        f = np.array([[1.0, 1.0], [0.0, 0.0]]).reshape(2, 1, 2)
        g = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(2, 1, 2)
        assert sam(f, g) == pytest.approx(45.0, abs=1e-10)


class TestErgas:
    def test_identical_is_exactly_zero(self):
        x = np.random.default_rng(0).random((4, 16, 16)) + 0.2
        assert ergas(x, x) == 0.0

    def test_closed_form_single_band(self):
        gt = np.full((1, 8, 8), 2.0)
        fused = np.full((1, 8, 8), 2.2)
        assert ergas(fused, gt, ratio=4) == pytest.approx(2.5, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        f = rng.random((4, 16, 16)) + 0.5
        g = rng.random((4, 16, 16)) + 0.5
        assert ergas(2.0 * f, 2.0 * g) == ergas(f, g)

    def test_ratio_rescales(self):
        rng = np.random.default_rng(3)
        f = rng.random((2, 8, 8)) + 0.5
        g = rng.random((2, 8, 8)) + 0.5
        assert ergas(f, g, ratio=2) == pytest.approx(2.0 * ergas(f, g, ratio=4))

    def test_zero_mean_band_names_the_band(self):
        gt = np.ones((3, 8, 8))
        gt[1] = 0.0
        with pytest.raises(DataError, match="band 1"):
            ergas(gt.copy(), gt)


class TestQ:
    def test_identical_is_exactly_one(self):
        x = np.random.default_rng(0).random((4, 64, 64))
        assert q_avg(x, x) == 1.0

    def test_matches_brute_force_blocks(self):
        rng = np.random.default_rng(1)
        x = rng.random((64, 96))
        y = 0.6 * x + 0.4 * rng.random((64, 96))
        assert qindex(x, y, window=32) == pytest.approx(
            q_ref(x, y, 32), abs=1e-12)

    def test_constant_shift_shrinks_q(self):
        rng = np.random.default_rng(2)
        x = rng.random((64, 64))
        shifted = x + 0.5
        q = qindex(x, shifted, window=32)
        assert q == pytest.approx(q_ref(x, shifted, 32), abs=1e-12)
        assert q < 0.95

    def test_anticorrelated_is_negative(self):
        rng = np.random.default_rng(3)
        x = rng.random((32, 32))
        assert qindex(x, 1.0 - x, window=32) < 0.0

    def test_white_noise_decorrelates(self):
        rng = np.random.default_rng(4)
        x = rng.random((64, 64))
        y = rng.random((64, 64))
        assert abs(qindex(x, y, window=32)) < 0.1

    def test_degenerate_blocks_skipped(self):
        # Left half constant in both -> those blocks have zero variance
        # AND zero mean, so they drop out; right half carries the value.
        x = np.zeros((32, 64))
        y = np.zeros((32, 64))
        rng = np.random.default_rng(5)
        x[:, 32:] = rng.random((32, 32))
        y[:, 32:] = x[:, 32:]
        assert qindex(x, y, window=32) == 1.0

    def test_all_degenerate_rejected(self):
        z = np.zeros((32, 32))
        with pytest.raises(DataError, match="degenerate"):
            qindex(z, z, window=32)

    def test_window_larger_than_image(self):
        with pytest.raises(DataError, match="smaller"):
            q_avg(np.zeros((2, 16, 16)), np.zeros((2, 16, 16)), window=32)

    def test_band_mean(self):
        rng = np.random.default_rng(6)
        f = rng.random((2, 32, 32))
        g = rng.random((2, 32, 32))
        want = 0.5 * (q_ref(f[0], g[0], 32) + q_ref(f[1], g[1], 32))
        assert q_avg(f, g) == pytest.approx(want, abs=1e-12)


class TestFullResolution:
    def inputs(self, seed=0, c=4):
        rng = np.random.default_rng(seed)
        low = rng.random((c, 16, 16))
        pan_low = low.mean(axis=0, keepdims=True)
        return low, replicate4(low), pan_low, replicate4(pan_low)

    def test_replicated_fused_has_zero_spectral_distortion(self):
        low, fused, _, _ = self.inputs()
        assert d_lambda(fused, low, window=32) == pytest.approx(0.0, abs=1e-12)

    def test_replicated_fused_has_zero_spatial_distortion(self):
        low, fused, pan_low, pan = self.inputs()
        assert d_s(fused, low, pan, pan_low, window=32) == pytest.approx(
            0.0, abs=1e-12)

    def test_band_shuffle_raises_spectral_distortion(self):
        low, fused, _, _ = self.inputs(seed=1)
        scrambled = fused[::-1].copy()
        assert d_lambda(scrambled, low, window=32) > 0.01

    def test_blurred_fused_raises_spatial_distortion(self):
        low, fused, pan_low, pan = self.inputs(seed=2)
        smeared = fused.copy()
        smeared[:, 1:] = 0.5 * (fused[:, 1:] + fused[:, :-1])
        base = d_s(fused, low, pan, pan_low, window=32)
        assert d_s(smeared, low, pan, pan_low, window=32) > base

    def test_spectral_distortion_needs_two_bands(self):
        with pytest.raises(DataError, match=">= 2 bands"):
            d_lambda(np.ones((1, 32, 32)), np.ones((1, 8, 8)))

    def test_pan_shape_checked(self):
        low, fused, pan_low, pan = self.inputs()
        with pytest.raises(DataError, match="pan"):
            d_s(fused, low, pan[:, :32, :32], pan_low)


class TestHqnr:
    def test_perfect_scores(self):
        assert hqnr(0.0, 0.0) == 1.0

    def test_reported_operating_point(self):
        assert hqnr(0.0146, 0.0279) == pytest.approx(0.9579, abs=5e-4)

    def test_symmetry(self):
        assert hqnr(0.3, 0.1) == hqnr(0.1, 0.3)

    def test_monotone_decreasing_in_each_argument(self):
        for d in np.linspace(0.0, 0.9, 7):
            assert hqnr(d + 0.05, 0.2) < hqnr(d, 0.2)
            assert hqnr(0.2, d + 0.05) < hqnr(0.2, d)

    def test_non_finite_rejected(self):
        with pytest.raises(DataError, match="d_s"):
            hqnr(0.1, float("nan"))


class TestReport:
    def test_summary_mean_and_std(self):
        rep = MetricReport("toy", ratio=4, window=32)
        rep.add({"sam": 1.0, "ergas": 2.0})
        rep.add({"sam": 3.0, "ergas": 4.0})
        s = rep.summary()
        assert s["sam"]["mean"] == pytest.approx(2.0)
        assert s["sam"]["std"] == pytest.approx(1.0)
        assert s["ergas"]["mean"] == pytest.approx(3.0)

    def test_json_shape(self):
        rep = MetricReport("toy", ratio=4, window=32)
        rep.add({"sam": 1.0})
        obj = rep.to_json()
        assert obj["dataset_id"] == "toy"
        assert obj["per_image"] == [{"sam": 1.0}]
        assert "summary" in obj
