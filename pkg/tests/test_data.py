"""Scene synthesis, degradation pipeline, dataset round trips."""

import json

import numpy as np
import pytest

from arconv.data import (DATASET_MAGIC, Dataset, SampleTriple, SceneObject,
                         SceneSpec, area_decimate, export_composite,
                         gaussian_blur, gaussian_kernel1d, pan_from,
                         random_scene, read_dataset, synth_scene, wald_degrade,
                         write_dataset)
from arconv.errors import ConfigurationError, DataError


class TestScene:
    def flat_spec(self, **kw):
        base = dict(height=16, width=16, bands=4,
                    background=(0.2, 0.4, 0.6, 0.8))
        base.update(kw)
        return SceneSpec(**base)

    def test_empty_inventory_is_constant_background(self):
        img = synth_scene(self.flat_spec())
        for b, v in enumerate((0.2, 0.4, 0.6, 0.8)):
            assert np.all(img[b] == v)

    def test_rectangle_sum_equals_area(self):
        obj = SceneObject("rect", 3, 5, 4, 6, (1.0, 1.0, 1.0, 1.0))
        spec = self.flat_spec(background=(0.0,) * 4, objects=(obj,))
        img = synth_scene(spec)
        assert img.sum(axis=(1, 2)) == pytest.approx([24.0] * 4)

    def test_disk_is_centred_and_inside(self):
        obj = SceneObject("disk", 8, 8, 4, 4, (1.0,) * 4)
        img = synth_scene(self.flat_spec(background=(0.0,) * 4, objects=(obj,)))
        assert img[0, 8, 8] == 1.0
        assert img[0, 8, 12] == 1.0   # boundary pixel at distance == radius
        assert img[0, 8, 13] == 0.0
        assert img[0, 0, 0] == 0.0

    def test_later_objects_occlude(self):
        a = SceneObject("rect", 0, 0, 8, 8, (0.3,) * 4)
        b = SceneObject("rect", 2, 2, 2, 2, (0.9,) * 4)
        img = synth_scene(self.flat_spec(background=(0.0,) * 4, objects=(a, b)))
        assert img[0, 3, 3] == 0.9
        assert img[0, 0, 0] == 0.3

    def test_noise_is_seeded(self):
        spec = self.flat_spec(noise=0.05, seed=3)
        assert np.array_equal(synth_scene(spec), synth_scene(spec))
        other = self.flat_spec(noise=0.05, seed=4)
        assert not np.array_equal(synth_scene(spec), synth_scene(other))

    def test_objects_must_stay_inside(self):
        obj = SceneObject("rect", 14, 0, 4, 4, (1.0,) * 4)
        with pytest.raises(ConfigurationError, match="canvas"):
            self.flat_spec(objects=(obj,))
        edge_disk = SceneObject("disk", 2, 8, 3, 3, (1.0,) * 4)
        with pytest.raises(ConfigurationError, match="canvas"):
            self.flat_spec(objects=(edge_disk,))

    def test_band_count_is_restricted(self):
        with pytest.raises(ConfigurationError, match="4 or 8"):
            SceneSpec(8, 8, 3, (0.5, 0.5, 0.5))

    def test_random_scene_spans_sizes(self):
        spec = random_scene(np.random.default_rng(0), 64, 64, 4,
                            num_objects=20)
        sizes = [max(o.size_y, o.size_x) for o in spec.objects]
        assert min(sizes) <= 6 and max(sizes) >= 12
        synth_scene(spec)  # all objects render inside


class TestDegrade:
    def test_kernel_is_normalised_and_symmetric(self):
        w = gaussian_kernel1d(1.7)
        assert len(w) == 15  # radius int(4*1.7 + 0.5) = 7
        assert w.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.allclose(w, w[::-1])

    def test_blur_preserves_constants(self):
        img = np.full((2, 12, 12), 0.37)
        out = gaussian_blur(img)
        assert np.abs(out - 0.37).max() < 1e-14

    def test_blur_too_small_extent(self):
        with pytest.raises(DataError, match="blur radius"):
            gaussian_blur(np.zeros((1, 4, 12)))

    def test_decimation_hand_case(self):
        # 8x8 ramp: pixel value = 10*row + col.  Top-left anchored 4x4
        # means: block (0,0) rows 0-3 cols 0-3 -> mean 10*1.5 + 1.5 = 16.5.
        img = (10.0 * np.arange(8)[:, None] + np.arange(8)[None, :])[None]
        out = area_decimate(img, 4)
        want = np.array([[[16.5, 20.5], [56.5, 60.5]]])
        assert np.array_equal(out, want)

    def test_decimation_requires_divisible_extent(self):
        with pytest.raises(DataError, match="divisible"):
            area_decimate(np.zeros((1, 10, 8)), 4)

    def test_pan_weights_default_uniform(self):
        gt = np.zeros((4, 8, 8))
        gt[2] = 1.0
        pan = pan_from(gt)
        assert pan.shape == (1, 8, 8)
        assert np.abs(pan - 0.25).max() < 1e-15

    def test_pan_weights_validated(self):
        gt = np.zeros((4, 8, 8))
        with pytest.raises(ConfigurationError, match="sum to 1"):
            pan_from(gt, np.array([0.5, 0.5, 0.5, 0.5]))
        with pytest.raises(ConfigurationError, match="4 band weights"):
            pan_from(gt, np.array([1.0]))

    def test_band_impulse_scales_by_weight(self):
        gt = np.zeros((4, 8, 8))
        gt[1, 3, 3] = 1.0
        pan = pan_from(gt, np.array([0.1, 0.6, 0.2, 0.1]))
        assert pan[0, 3, 3] == pytest.approx(0.6, abs=1e-15)
        assert pan[0, 0, 0] == 0.0

    def test_triple_shapes_and_ratio(self):
        gt = np.random.default_rng(0).random((4, 32, 24))
        t = wald_degrade(gt)
        assert t.pan.shape == (1, 32, 24)
        assert t.lrms_low.shape == (4, 8, 6)
        assert np.array_equal(t.gt, gt)

    def test_constant_passes_through(self):
        gt = np.full((4, 16, 16), 0.41)
        t = wald_degrade(gt)
        assert np.abs(t.pan - 0.41).max() < 1e-14
        assert np.abs(t.lrms_low - 0.41).max() < 1e-14

    def test_mean_energy_preserved_by_decimation(self):
        gt = np.random.default_rng(1).random((4, 32, 32))
        blurred = gaussian_blur(gt)
        low = area_decimate(blurred, 4)
        for b in range(4):
            assert abs(low[b].mean() - blurred[b].mean()) < 1e-10

    def test_linearity_superposition(self):
        rng = np.random.default_rng(2)
        a = rng.random((4, 16, 16))
        b = rng.random((4, 16, 16))
        ta, tb, tsum = wald_degrade(a), wald_degrade(b), wald_degrade(a + b)
        assert np.abs(tsum.lrms_low - (ta.lrms_low + tb.lrms_low)).max() < 1e-10
        assert np.abs(tsum.pan - (ta.pan + tb.pan)).max() < 1e-10

    def test_unit_interval_is_preserved(self):
        gt = np.random.default_rng(3).random((4, 32, 32))
        t = wald_degrade(gt)
        for arr in (t.pan, t.lrms_low, t.gt):
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_indivisible_extent_rejected(self):
        with pytest.raises(DataError, match="divisible"):
            wald_degrade(np.zeros((4, 18, 16)))

    def test_triple_validates_shapes(self):
        with pytest.raises(DataError, match="pan shape"):
            SampleTriple(np.zeros((1, 8, 8)), np.zeros((4, 4, 4)),
                         np.zeros((4, 16, 16)))
        with pytest.raises(DataError, match="non-finite"):
            SampleTriple(np.full((1, 16, 16), np.nan), np.zeros((4, 4, 4)),
                         np.zeros((4, 16, 16)))


class TestDiskFormat:
    def triples(self, n=3, seed=0):
        rng = np.random.default_rng(seed)
        return [wald_degrade(rng.random((4, 16, 16))) for _ in range(n)]

    def test_round_trip_bit_identical(self, tmp_path):
        trips = self.triples()
        write_dataset(tmp_path, trips, bands=4, height=16, width=16)
        ds = read_dataset(tmp_path)
        assert len(ds) == 3
        for i, t in enumerate(trips):
            assert np.array_equal(ds.pan[i], t.pan.astype(np.float32))
            assert np.array_equal(ds.lrms_low[i], t.lrms_low.astype(np.float32))
            assert np.array_equal(ds.gt[i], t.gt.astype(np.float32))

    def test_manifest_records_counts_and_clamps(self, tmp_path):
        m = write_dataset(tmp_path, self.triples(2), bands=4, height=16, width=16)
        assert m["count"] == 2
        assert all(s["clamped"] == 0 for s in m["samples"])
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk == m

    def test_out_of_range_values_clamped_and_counted(self, tmp_path):
        t = wald_degrade(np.random.default_rng(1).random((4, 16, 16)))
        t.gt[0, 0, 0] = 1.5
        t.gt[1, 2, 3] = -0.25
        m = write_dataset(tmp_path, [t], bands=4, height=16, width=16)
        assert m["samples"][0]["clamped"] == 2
        ds = read_dataset(tmp_path)
        assert ds.gt[0, 0, 0, 0] == 1.0
        assert ds.gt[0, 1, 2, 3] == 0.0

    def test_empty_collection(self, tmp_path):
        m = write_dataset(tmp_path, [], bands=4, height=16, width=16)
        assert m["count"] == 0
        assert len(read_dataset(tmp_path)) == 0

    def test_corrupt_magic_names_offset(self, tmp_path):
        write_dataset(tmp_path, self.triples(1), bands=4, height=16, width=16)
        f = tmp_path / "sample_00000.raw"
        blob = bytearray(f.read_bytes())
        blob[0] ^= 0xFF
        f.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="offset 0"):
            read_dataset(tmp_path)

    def test_truncated_sample_reports_sizes(self, tmp_path):
        write_dataset(tmp_path, self.triples(1), bands=4, height=16, width=16)
        f = tmp_path / "sample_00000.raw"
        f.write_bytes(f.read_bytes()[:100])
        with pytest.raises(DataError, match="expected"):
            read_dataset(tmp_path)

    def test_dim_overflow_rejected(self, tmp_path):
        write_dataset(tmp_path, [], bands=4, height=16, width=16)
        m = json.loads((tmp_path / "manifest.json").read_text())
        m["height"] = 1 << 20
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(DataError, match="overflow"):
            read_dataset(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            read_dataset(tmp_path / "nowhere")

    def test_shape_mismatch_rejected_at_write(self, tmp_path):
        with pytest.raises(DataError, match="does not match"):
            write_dataset(tmp_path, self.triples(1), bands=8, height=16, width=16)

    def test_sample_metadata_lands_in_manifest(self, tmp_path):
        meta = [{"objects": [{"kind": "rect", "area": 24}]}]
        m = write_dataset(tmp_path, self.triples(1), bands=4, height=16,
                          width=16, sample_meta=meta)
        assert m["samples"][0]["objects"][0]["area"] == 24


class TestExport:
    def test_composite_png_and_sidecar(self, tmp_path):
        img = np.random.default_rng(0).random((4, 16, 16))
        out = tmp_path / "view.png"
        export_composite(out, img)
        assert out.is_file()
        side = json.loads((tmp_path / "view.json").read_text())
        assert side["bands"] == [0, 1, 2]
        assert len(side["stretch"]) == 3
        for s in side["stretch"]:
            assert s["min"] <= s["max"]

    def test_single_band_export(self, tmp_path):
        img = np.random.default_rng(1).random((1, 8, 8))
        export_composite(tmp_path / "gray.png", img, bands=(0,))
        from PIL import Image
        with Image.open(tmp_path / "gray.png") as im:
            assert im.size == (8, 8)

    def test_bad_band_selection(self, tmp_path):
        img = np.zeros((2, 8, 8))
        with pytest.raises(ConfigurationError, match="band selection"):
            export_composite(tmp_path / "x.png", img, bands=(0, 5, 1))
