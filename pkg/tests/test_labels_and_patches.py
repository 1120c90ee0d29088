import math

import numpy as np
import pytest

from lungct.data import (NoduleAnnotation, YoloLabelRecord, crop_patch_at,
                         extract_classifier_patch, load_slice_png,
                         read_yolo_labels, save_slice_png, slice_bounding_boxes,
                         write_yolo_labels)
from lungct.data.patches import PatchError
from lungct.data.yolo import LabelError
from lungct.volume import CtVolume, OutOfBoundsError

from oracles import sphere_volume_by_voxel_counting


def normalized_volume(shape, spacing=(1, 1, 1), origin=(0, 0, 0), fill=0.5):
    return CtVolume(np.full(shape, fill, dtype=np.float32), spacing, origin,
                    normalized=True)


class TestSliceBoundingBoxes:
    def test_equatorial_slice_width_is_diameter(self):
        # r = 5 mm at the equator -> box width 10 mm normalized by slice extent
        vol = normalized_volume((41, 40, 50))
        ann = NoduleAnnotation("s", (20.0, 20.0, 25.0), 10.0)
        records = dict(slice_bounding_boxes(ann, vol))
        eq = records[20]
        assert eq.w == pytest.approx(10.0 / 50.0)
        assert eq.h == pytest.approx(10.0 / 40.0)

    def test_pythagorean_cross_section(self):
        # 3 mm off the equator with r = 5 mm -> disk radius 4 mm
        vol = normalized_volume((41, 40, 40))
        ann = NoduleAnnotation("s", (20.0, 20.0, 20.0), 10.0)
        records = dict(slice_bounding_boxes(ann, vol))
        assert records[23].w == pytest.approx(8.0 / 40.0)

    def test_no_record_outside_sphere(self):
        vol = normalized_volume((41, 40, 40))
        ann = NoduleAnnotation("s", (20.0, 20.0, 20.0), 10.0)
        zs = [z for z, _ in slice_bounding_boxes(ann, vol)]
        assert min(zs) >= 15 and max(zs) <= 25

    def test_center_outside_volume_raises(self):
        vol = normalized_volume((10, 10, 10))
        ann = NoduleAnnotation("s", (50.0, 5.0, 5.0), 4.0)
        with pytest.raises(OutOfBoundsError):
            slice_bounding_boxes(ann, vol)

    def test_edge_boxes_clamped_to_unit_square(self):
        vol = normalized_volume((21, 20, 20))
        ann = NoduleAnnotation("s", (10.0, 10.0, 1.0), 8.0)
        for _, rec in slice_bounding_boxes(ann, vol):
            x1, y1, x2, y2 = rec.corners()
            assert 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1

    def test_boxes_denormalize_inside_slice(self):
        rng = np.random.default_rng(0)
        vol = normalized_volume((30, 24, 28), spacing=(0.9, 1.1, 0.7), origin=(-5, 2, 1))
        for _ in range(20):
            center = (rng.uniform(-4, 20), rng.uniform(3, 27), rng.uniform(2, 19))
            ann = NoduleAnnotation("s", center, float(rng.uniform(2, 9)))
            for z, rec in slice_bounding_boxes(ann, vol):
                assert 0 <= z < 30
                x1, y1, x2, y2 = rec.corners()
                assert 0 <= x1 * 28 < x2 * 28 <= 28
                assert 0 <= y1 * 24 < y2 * 24 <= 24

    def test_disk_areas_integrate_to_sphere_volume(self):
        # per-slice disk areas at 0.5 mm spacing integrate to 4/3 pi r^3
        for r in (3.0, 5.0, 10.0):
            vol = normalized_volume((161, 80, 80), spacing=(0.5, 1.0, 1.0))
            ann = NoduleAnnotation("s", (40.0, 40.0, 40.0), 2 * r)
            total = 0.0
            for _, rec in slice_bounding_boxes(ann, vol):
                r_z = rec.w * 80 * 1.0 / 2.0  # denormalize to mm
                total += math.pi * r_z ** 2 * 0.5
            expected = 4.0 / 3.0 * math.pi * r ** 3
            assert abs(total - expected) / expected < 0.05
            # cross-check the analytic target against dense voxel counting
            counted = sphere_volume_by_voxel_counting(r, step=0.25)
            assert abs(counted - expected) / expected < 0.05


class TestYoloLabelIo:
    def test_exact_line_format(self, tmp_path):
        path = str(tmp_path / "labels.txt")
        write_yolo_labels([YoloLabelRecord(0, 0.5, 0.5, 0.25, 0.25)], path)
        assert open(path).read() == "0 0.500000 0.500000 0.250000 0.250000\n"

    def test_empty_list_empty_file(self, tmp_path):
        path = str(tmp_path / "labels.txt")
        write_yolo_labels([], path)
        assert open(path).read() == ""

    def test_order_preserved(self, tmp_path):
        recs = [YoloLabelRecord(0, 0.25, 0.25, 0.1, 0.1),
                YoloLabelRecord(0, 0.75, 0.75, 0.2, 0.2)]
        path = str(tmp_path / "labels.txt")
        write_yolo_labels(recs, path)
        assert read_yolo_labels(path) == recs

    def test_round_trip_lossless_at_6_decimals(self, tmp_path):
        rng = np.random.default_rng(1)
        recs = []
        for _ in range(50):
            cx, cy = rng.uniform(0.3, 0.7, size=2)
            w, h = rng.uniform(0.05, 0.5, size=2)
            recs.append(YoloLabelRecord(0, round(cx, 6), round(cy, 6),
                                        round(w, 6), round(h, 6)))
        path = str(tmp_path / "labels.txt")
        write_yolo_labels(recs, path)
        again = str(tmp_path / "labels2.txt")
        write_yolo_labels(read_yolo_labels(path), again)
        assert open(path).read() == open(again).read()

    def test_record_validation(self):
        with pytest.raises(LabelError):
            YoloLabelRecord(0, 0.1, 0.5, 0.5, 0.2)  # pokes out on the left
        with pytest.raises(LabelError):
            YoloLabelRecord(-1, 0.5, 0.5, 0.2, 0.2)


class TestSlicePng:
    def test_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(2)
        plane = rng.uniform(size=(32, 48)).astype(np.float32)
        path = str(tmp_path / "slice.png")
        save_slice_png(plane, path)
        back = load_slice_png(path)
        assert back.shape == (32, 48)
        assert np.max(np.abs(back - plane)) <= 0.5 / 255 + 1e-6


class TestClassifierPatch:
    def volume_with_marker(self):
        arr = np.zeros((21, 80, 80), dtype=np.float32)
        arr[10, 40, 40] = 1.0
        return CtVolume(arr, (1, 1, 1), (0, 0, 0), normalized=True)

    def test_center_pixel_matches_volume(self):
        vol = self.volume_with_marker()
        ann = NoduleAnnotation("s", (10.0, 40.0, 40.0), 5.0, "benign")
        patch = extract_classifier_patch(vol, ann)
        assert patch.pixels.shape == (64, 64)
        assert patch.pixels[32, 32] == 1.0

    def test_edge_padding_columns(self):
        # center 10 voxels from the x=0 face -> 64/2 - 10 = 22 zero columns
        arr = np.ones((5, 80, 80), dtype=np.float32)
        vol = CtVolume(arr, (1, 1, 1), (0, 0, 0), normalized=True)
        ann = NoduleAnnotation("s", (2.0, 40.0, 10.0), 4.0, "malignant")
        patch = extract_classifier_patch(vol, ann)
        assert np.all(patch.pixels[:, :22] == 0.0)
        assert np.all(patch.pixels[:, 22] == 1.0)

    def test_requires_normalized_volume(self):
        vol = CtVolume(np.zeros((5, 80, 80), dtype=np.float32))
        ann = NoduleAnnotation("s", (2.0, 40.0, 40.0), 4.0, "benign")
        with pytest.raises(PatchError, match="normalized"):
            extract_classifier_patch(vol, ann)

    def test_crop_patch_shape_always_64(self):
        rng = np.random.default_rng(3)
        plane = rng.uniform(size=(30, 30)).astype(np.float32)
        for _ in range(10):
            cy, cx = rng.integers(-5, 35, size=2)
            assert crop_patch_at(plane, cy, cx).shape == (64, 64)
