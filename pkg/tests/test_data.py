import numpy as np
import pytest

from lungct.data import (MetaImageError, NoduleAnnotation, load_metaimage,
                         parse_annotations, save_metaimage, split_dataset,
                         write_annotations)
from lungct.data.annotations import AnnotationError, malignancy_from_median_score


class TestMetaImage:
    def write(self, tmp_path, voxels, spacing_xyz="1 1 1", offset_xyz="0 0 0",
              element_type="MET_SHORT", dims=None, payload=None):
        voxels = np.asarray(voxels)
        nz, ny, nx = voxels.shape
        dims = dims or f"{nx} {ny} {nz}"
        header = "\n".join([
            "ObjectType = Image",
            "NDims = 3",
            "BinaryData = True",
            "BinaryDataByteOrderMSB = False",
            f"Offset = {offset_xyz}",
            f"ElementSpacing = {spacing_xyz}",
            f"DimSize = {dims}",
            f"ElementType = {element_type}",
            "ElementDataFile = vol.raw",
        ])
        (tmp_path / "vol.mhd").write_text(header + "\n")
        raw = payload if payload is not None else voxels.astype("<i2").tobytes()
        (tmp_path / "vol.raw").write_bytes(raw)
        return str(tmp_path / "vol.mhd")

    def test_round_trip_values_and_geometry(self, tmp_path):
        rng = np.random.default_rng(0)
        voxels = rng.integers(-1000, 500, size=(3, 4, 5)).astype(np.int16)
        path = self.write(tmp_path, voxels, spacing_xyz="0.7 0.7 2.5",
                          offset_xyz="-100 -120 -300")
        vol = load_metaimage(path)
        assert vol.shape == (3, 4, 5)
        assert np.array_equal(vol.voxels, voxels.astype(np.float32))
        # header order is (x, y, z); package order is (z, y, x)
        assert vol.spacing == pytest.approx((2.5, 0.7, 0.7))
        assert vol.origin == pytest.approx((-300, -120, -100))

    def test_cube_payload_count(self, tmp_path):
        voxels = np.arange(64).reshape(4, 4, 4)
        vol = load_metaimage(self.write(tmp_path, voxels))
        assert vol.shape == (4, 4, 4)

    def test_truncated_payload_rejected(self, tmp_path):
        voxels = np.zeros((4, 4, 4), dtype=np.int16)
        path = self.write(tmp_path, voxels, payload=voxels.tobytes()[:-8])
        with pytest.raises(MetaImageError, match="length mismatch"):
            load_metaimage(path)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "bad.mhd"
        path.write_text("NDims = 3\nDimSize = 2 2 2\nElementDataFile = x.raw\n")
        with pytest.raises(MetaImageError, match="missing header keys"):
            load_metaimage(str(path))

    def test_unsupported_element_type(self, tmp_path):
        path = self.write(tmp_path, np.zeros((2, 2, 2)), element_type="MET_LONG_LONG")
        with pytest.raises(MetaImageError, match="unsupported ElementType"):
            load_metaimage(path)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        voxels = rng.integers(-1200, 600, size=(6, 5, 4)).astype(np.float32)
        out = str(tmp_path / "phantom.mhd")
        save_metaimage(out, voxels, spacing=(2.5, 0.7, 0.7), origin=(-10.0, 3.0, 4.0))
        vol = load_metaimage(out)
        assert np.array_equal(vol.voxels, voxels)
        assert vol.spacing == pytest.approx((2.5, 0.7, 0.7))
        assert vol.origin == pytest.approx((-10.0, 3.0, 4.0))


class TestAnnotations:
    def test_direct_parse(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("seriesuid,coordX,coordY,coordZ,diameter_mm\n"
                        "s1,-100.0,50.0,200.0,6.5\n")
        (rec,) = parse_annotations(str(path))
        assert rec.series_id == "s1"
        assert rec.center_world == (200.0, 50.0, -100.0)  # permuted to (z, y, x)
        assert rec.diameter_mm == 6.5
        assert rec.malignancy is None

    def test_header_only_gives_empty_list(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("seriesuid,coordX,coordY,coordZ,diameter_mm\n")
        assert parse_annotations(str(path)) == []

    def test_zero_diameter_rejected_with_row(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("seriesuid,coordX,coordY,coordZ,diameter_mm\n"
                        "s1,0,0,0,0\n")
        with pytest.raises(AnnotationError, match="row 2"):
            parse_annotations(str(path))

    def test_non_numeric_rejected_with_row(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("seriesuid,coordX,coordY,coordZ,diameter_mm\n"
                        "s1,1,2,3,4\ns2,a,2,3,4\n")
        with pytest.raises(AnnotationError, match="row 3"):
            parse_annotations(str(path))

    def test_missing_column(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("seriesuid,coordX,coordY,coordZ\ns1,1,2,3\n")
        with pytest.raises(AnnotationError, match="diameter_mm"):
            parse_annotations(str(path))

    def test_round_trip_with_malignancy(self, tmp_path):
        records = [
            NoduleAnnotation("a", (1.0, 2.0, 3.0), 4.0, "benign"),
            NoduleAnnotation("b", (-1.5, 0.25, 9.0), 11.25, "malignant"),
        ]
        path = str(tmp_path / "ann.csv")
        write_annotations(path, records)
        assert parse_annotations(path) == records

    def test_median_score_mapping(self):
        assert malignancy_from_median_score(5) == "malignant"
        assert malignancy_from_median_score(4) == "malignant"
        assert malignancy_from_median_score(3) is None
        assert malignancy_from_median_score(2) == "benign"
        assert malignancy_from_median_score(1) == "benign"


class TestSplitDataset:
    def test_8_1_1(self):
        train, val, test = split_dataset(range(10), (0.8, 0.1, 0.1), seed=0)
        assert (len(train), len(val), len(test)) == (8, 1, 1)

    def test_same_seed_same_split(self):
        a = split_dataset(range(100), (0.7, 0.2, 0.1), seed=42)
        b = split_dataset(range(100), (0.7, 0.2, 0.1), seed=42)
        assert a == b

    def test_union_is_input_multiset(self):
        items = list(np.random.default_rng(0).integers(0, 5, size=37))
        parts = split_dataset(items, (0.5, 0.25, 0.25), seed=7)
        merged = sorted(x for p in parts for x in p)
        assert merged == sorted(items)

    def test_disjoint_indices(self):
        parts = split_dataset([f"v{i}" for i in range(23)], (0.6, 0.2, 0.2), seed=3)
        seen = [x for p in parts for x in p]
        assert len(seen) == len(set(seen)) == 23

    def test_fraction_validation(self):
        with pytest.raises(ValueError, match="sum to 1"):
            split_dataset(range(10), (0.5, 0.1), seed=0)

    def test_too_few_items(self):
        with pytest.raises(ValueError, match="partitions"):
            split_dataset([1, 2], (0.4, 0.3, 0.3), seed=0)

    def test_proportional_to_table_defaults(self):
        # 888-volume corpus at (800/888, 88/888) mirrors the documented counts
        train, test = split_dataset(range(888), (800 / 888, 88 / 888), seed=0)
        assert (len(train), len(test)) == (800, 88)
