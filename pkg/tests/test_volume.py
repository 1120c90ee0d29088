import numpy as np
import pytest

from lungct.volume import (CANONICAL_CUBE, CtVolume, EmptyMaskError, LungMask,
                           OutOfBoundsError, binarize_lung_mask,
                           clip_and_normalize_hu, crop_foreground,
                           extract_axial_slice, pad_to_shape,
                           resample_to_canonical, voxel_to_world, world_to_voxel)


def make_volume(voxels, spacing=(1, 1, 1), origin=(0, 0, 0), normalized=False):
    return CtVolume(np.asarray(voxels, dtype=np.float32), spacing, origin, normalized)


class TestCtVolumeInvariants:
    def test_positive_spacing_required(self):
        with pytest.raises(ValueError):
            make_volume(np.zeros((2, 2, 2)), spacing=(1, 0, 1))

    def test_normalized_range_enforced(self):
        with pytest.raises(ValueError):
            CtVolume(np.full((2, 2, 2), 2.0, dtype=np.float32), normalized=True)

    def test_requires_3d(self):
        with pytest.raises(ValueError):
            make_volume(np.zeros((4, 4)))


class TestClipAndNormalize:
    def test_window_endpoints_exact(self):
        vol = make_volume([[[-1200.0, 600.0]]])
        out = clip_and_normalize_hu(vol)
        assert out.voxels[0, 0, 0] == 0.0
        assert out.voxels[0, 0, 1] == 1.0
        assert out.normalized

    def test_midpoint_and_clip(self):
        vol = make_volume([[[-300.0, -3000.0, 9000.0]]])
        out = clip_and_normalize_hu(vol)
        assert out.voxels[0, 0, 0] == pytest.approx(0.5)
        assert out.voxels[0, 0, 1] == 0.0  # clipped below window floor
        assert out.voxels[0, 0, 2] == 1.0

    def test_rejects_double_normalization(self):
        vol = clip_and_normalize_hu(make_volume(np.zeros((2, 2, 2))))
        with pytest.raises(ValueError, match="already normalized"):
            clip_and_normalize_hu(vol)

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(-4000, 4000, size=4096).astype(np.float32)
        out = clip_and_normalize_hu(make_volume(values.reshape(16, 16, 16)))
        flat_in = values
        flat_out = out.voxels.ravel()
        order = np.argsort(flat_in, kind="stable")
        assert np.all(np.diff(flat_out[order]) >= 0)
        assert flat_out.min() >= 0.0 and flat_out.max() <= 1.0

    def test_geometry_unchanged(self):
        vol = make_volume(np.zeros((3, 4, 5)), spacing=(2, 1, 0.5), origin=(-1, 2, 3))
        out = clip_and_normalize_hu(vol)
        assert out.spacing == vol.spacing
        assert out.origin == vol.origin


class TestBinarizeLungMask:
    def test_lung_labels_map_to_one(self):
        raw = np.array([[[0, 1, 3, 4, 5]]])
        mask = binarize_lung_mask(raw)
        assert mask.voxels.tolist() == [[[0, 0, 1, 1, 0]]]

    def test_all_background(self):
        mask = binarize_lung_mask(np.ones((3, 3, 3), dtype=np.int32))
        assert mask.foreground_count() == 0

    def test_only_binary_values(self):
        rng = np.random.default_rng(1)
        raw = rng.integers(0, 6, size=(8, 8, 8))
        mask = binarize_lung_mask(raw)
        assert set(np.unique(mask.voxels)) <= {0, 1}


class TestResample:
    def test_doubling_preserves_world_extent(self):
        vol = make_volume(np.random.default_rng(2).normal(size=(16, 16, 16)),
                          spacing=(2.0, 2.0, 2.0))
        out, _ = resample_to_canonical(vol, cube_size=32)
        assert out.shape == (32, 32, 32)
        # 16 voxels at 2 mm = 32 mm extent = 32 voxels at 1 mm
        assert out.spacing == pytest.approx((1.0, 1.0, 1.0))
        assert out.extent_mm == pytest.approx(vol.extent_mm)

    def test_identity_resample_keeps_values(self):
        arr = np.random.default_rng(3).uniform(size=(32, 32, 32)).astype(np.float32)
        vol = make_volume(arr, spacing=(1, 1, 1))
        out, _ = resample_to_canonical(vol, cube_size=32)
        assert np.array_equal(out.voxels, arr)

    def test_mask_stays_binary(self):
        rng = np.random.default_rng(4)
        vol = make_volume(rng.normal(size=(10, 14, 12)), spacing=(2.3, 0.8, 0.9))
        mask = LungMask((rng.uniform(size=(10, 14, 12)) > 0.6).astype(np.uint8),
                        vol.spacing, vol.origin)
        out_vol, out_mask = resample_to_canonical(vol, mask, cube_size=32)
        assert set(np.unique(out_mask.voxels)) <= {0, 1}
        assert out_vol.shape == out_mask.shape == (32, 32, 32)

    def test_extent_preserved_within_half_voxel(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            shape = tuple(int(v) for v in rng.integers(6, 24, size=3))
            spacing = tuple(float(v) for v in rng.uniform(0.5, 3.0, size=3))
            vol = make_volume(rng.normal(size=shape), spacing=spacing)
            out, _ = resample_to_canonical(vol, cube_size=16)
            for before, after, out_sp in zip(vol.extent_mm, out.extent_mm, out.spacing):
                assert abs(before - after) <= 0.5 * max(out_sp, 1.0)

    def test_degenerate_axis_warns(self):
        vol = make_volume(np.zeros((1, 8, 8)), spacing=(5.0, 1.0, 1.0))
        with pytest.warns(UserWarning, match="size 1"):
            resample_to_canonical(vol, cube_size=16)

    def test_default_cube_is_full_scale(self):
        assert CANONICAL_CUBE == 256


class TestWorldVoxel:
    def test_origin_maps_to_zero(self):
        vol = make_volume(np.zeros((4, 4, 4)), origin=(-7, 3, 11))
        assert world_to_voxel((-7, 3, 11), vol) == pytest.approx((0, 0, 0))

    def test_spacing_example(self):
        # (40 - (-100)) / 0.7 = 200
        vol = make_volume(np.zeros((4, 4, 256)), spacing=(1, 1, 0.7), origin=(0, 0, -100))
        idx = world_to_voxel((0, 0, 40), vol)
        assert idx[2] == pytest.approx(200.0)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(6)
        vol = make_volume(np.zeros((9, 9, 9)), spacing=(0.7, 1.3, 2.9), origin=(5, -4, 2))
        for _ in range(50):
            idx = rng.uniform(0, 8.4, size=3)
            back = world_to_voxel(voxel_to_world(idx, vol), vol)
            assert np.max(np.abs(back - idx)) <= 1e-9

    def test_out_of_bounds_names_axis(self):
        vol = make_volume(np.zeros((4, 4, 4)))
        with pytest.raises(OutOfBoundsError) as excinfo:
            world_to_voxel((0, 0, 99), vol)
        assert excinfo.value.axis == "x"


class TestCropForeground:
    def test_single_voxel_zero_margin(self):
        mask = np.zeros((32, 32, 40), dtype=np.uint8)
        mask[10, 20, 30] = 1
        vol = make_volume(np.random.default_rng(7).normal(size=mask.shape))
        cropped, _, box = crop_foreground(vol, LungMask(mask), margin=0)
        assert box.lo == (10, 20, 30) and box.hi == (11, 21, 31)
        assert cropped.shape == (1, 1, 1)

    def test_margin_dilation_and_clamp(self):
        # foreground spans 5..9 -> margin 2 gives 3..12 (exclusive upper)
        mask = np.zeros((20, 20, 20), dtype=np.uint8)
        mask[5:10, 5:10, 5:10] = 1
        vol = make_volume(np.zeros(mask.shape))
        _, _, box = crop_foreground(vol, LungMask(mask), margin=2)
        assert box.lo == (3, 3, 3)
        assert box.hi == (12, 12, 12)

    def test_full_foreground_returns_everything(self):
        vol = make_volume(np.zeros((6, 7, 8)))
        _, _, box = crop_foreground(vol, LungMask(np.ones((6, 7, 8), dtype=np.uint8)))
        assert box.lo == (0, 0, 0) and box.hi == (6, 7, 8)

    def test_empty_mask_raises(self):
        vol = make_volume(np.zeros((4, 4, 4)))
        with pytest.raises(EmptyMaskError):
            crop_foreground(vol, LungMask(np.zeros((4, 4, 4), dtype=np.uint8)))

    def test_box_contains_all_foreground_random(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            mask = (rng.uniform(size=(6, 6, 6)) > 0.8).astype(np.uint8)
            if mask.sum() == 0:
                continue
            vol = make_volume(np.zeros(mask.shape))
            _, _, box = crop_foreground(vol, LungMask(mask), margin=int(rng.integers(0, 3)))
            for idx in np.argwhere(mask):
                assert all(l <= v < h for v, l, h in zip(idx, box.lo, box.hi))

    def test_origin_shift_keeps_world_coords(self):
        mask = np.zeros((10, 10, 10), dtype=np.uint8)
        mask[4:7, 2:5, 3:8] = 1
        vol = make_volume(np.arange(1000).reshape(10, 10, 10),
                          spacing=(2, 1, 1), origin=(5, 5, 5))
        cropped, _, box = crop_foreground(vol, LungMask(mask, vol.spacing, vol.origin))
        world = voxel_to_world((0, 0, 0), cropped)
        assert tuple(world) == pytest.approx((5 + 4 * 2, 5 + 2, 5 + 3))


class TestPadToShape:
    def test_centers_content_and_shifts_origin(self):
        vol = make_volume(np.ones((4, 4, 4)), spacing=(2, 1, 1), origin=(10, 10, 10))
        padded = pad_to_shape(vol, (8, 5, 4))
        assert padded.shape == (8, 5, 4)
        assert padded.voxels[2:6, 0:4, :].sum() == 64  # content centered
        # low-side pads: z 2 voxels at 2 mm, y 0 voxels (floor of 1/2), x none
        assert padded.origin == pytest.approx((10 - 4, 10, 10))
        world = voxel_to_world((2, 0, 0), padded)
        assert tuple(world) == pytest.approx((10, 10, 10))

    def test_rejects_shrinking(self):
        vol = make_volume(np.zeros((4, 4, 4)))
        with pytest.raises(ValueError, match="smaller"):
            pad_to_shape(vol, (3, 4, 4))

    def test_identity_when_already_at_shape(self):
        arr = np.random.default_rng(11).uniform(size=(4, 5, 6)).astype(np.float32)
        vol = make_volume(arr)
        padded = pad_to_shape(vol, (4, 5, 6))
        assert np.array_equal(padded.voxels, arr)
        assert padded.origin == vol.origin


class TestExtractAxialSlice:
    def test_first_plane(self):
        arr = np.random.default_rng(9).normal(size=(5, 6, 7)).astype(np.float32)
        vol = make_volume(arr, spacing=(2.0, 0.5, 0.25))
        plane, spacing = extract_axial_slice(vol, 0)
        assert np.array_equal(plane, arr[0])
        assert spacing == (0.5, 0.25)

    def test_indexing_matches_grid(self):
        arr = np.random.default_rng(10).normal(size=(5, 6, 7)).astype(np.float32)
        vol = make_volume(arr)
        for z in range(5):
            plane, _ = extract_axial_slice(vol, z)
            assert np.array_equal(plane, arr[z])

    def test_out_of_range(self):
        vol = make_volume(np.zeros((3, 3, 3)))
        with pytest.raises(OutOfBoundsError):
            extract_axial_slice(vol, 3)
