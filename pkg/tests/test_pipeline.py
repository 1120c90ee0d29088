import os

import numpy as np
import pytest

from lungct.config import PipelineConfig
from lungct.data import PhantomSpec, write_phantom_bundle
from lungct.models.detector import Detection2D
from lungct.pipeline import StageError, run_inference, write_case_report


class StubSegmenter:
    """Predicts a centered box mask (or nothing) without a network."""

    def __init__(self, input_cube=32, empty=False):
        self.input_cube = input_cube
        self.empty = empty

    def predict(self, volume):
        mask = np.zeros_like(volume, dtype=np.uint8)
        if not self.empty:
            c = self.input_cube
            mask[c // 4: 3 * c // 4, c // 4: 3 * c // 4, c // 4: 3 * c // 4] = 1
        return mask


class StubDetector:
    """Emits one centered and one corner detection on every slice."""

    def predict(self, planes):
        dets = [Detection2D(0.5, 0.5, 0.25, 0.25, 0.9),
                Detection2D(0.03, 0.03, 0.05, 0.05, 0.8)]
        return [list(dets) for _ in planes]


class StubClassifier:
    def predict_proba(self, patch):
        return np.array([[0.25, 0.75]])


@pytest.fixture(scope="module")
def phantom_volume(tmp_path_factory):
    bundle = str(tmp_path_factory.mktemp("pipe") / "bundle")
    write_phantom_bundle(bundle, PhantomSpec(seed=900, cube_size=32, nodule_count=0))
    return os.path.join(bundle, "volume.mhd")


def make_config(**kw):
    defaults = dict(canonical_cube=32, seed=5, mask_gate=True, crop_margin=1)
    defaults.update(kw)
    return PipelineConfig(**defaults)


class TestRunInference:
    def test_degenerate_empty_mask(self, phantom_volume):
        report = run_inference(phantom_volume, make_config(),
                               StubSegmenter(empty=True), StubDetector(),
                               StubClassifier())
        assert report.degenerate
        assert report.mask_voxels == 0
        assert report.detections == []

    def test_mask_gate_filters_outside_detections(self, phantom_volume):
        report = run_inference(phantom_volume, make_config(),
                               StubSegmenter(), StubDetector(), StubClassifier())
        assert not report.degenerate
        # the 0.03-corner detection lies outside the centered box mask
        assert report.detections
        assert all(abs(d.cx - 0.5) < 0.1 for d in report.detections)

    def test_mask_gate_off_keeps_everything(self, phantom_volume):
        gated = run_inference(phantom_volume, make_config(),
                              StubSegmenter(), StubDetector(), StubClassifier())
        ungated = run_inference(phantom_volume, make_config(mask_gate=False),
                                StubSegmenter(), StubDetector(), StubClassifier())
        assert len(ungated.detections) > len(gated.detections)

    def test_stage_timing_order(self, phantom_volume):
        report = run_inference(phantom_volume, make_config(),
                               StubSegmenter(), StubDetector(), StubClassifier())
        assert list(report.timings) == ["preprocess_s", "segment_s", "detect_s",
                                        "classify_s"]

    def test_every_detection_classified(self, phantom_volume):
        report = run_inference(phantom_volume, make_config(),
                               StubSegmenter(), StubDetector(), StubClassifier())
        for d in report.detections:
            assert d.label == "malignant"  # stub classifier says 0.75 malignant
            assert abs(d.p_benign + d.p_malignant - 1.0) < 1e-6

    def test_stage_failure_names_the_stage(self, phantom_volume):
        class BrokenDetector:
            def predict(self, planes):
                raise ValueError("weights corrupted")

        with pytest.raises(StageError, match="stage 'detect' failed"):
            run_inference(phantom_volume, make_config(), StubSegmenter(),
                          BrokenDetector(), StubClassifier())

    def test_missing_volume_fails_in_preprocess(self):
        with pytest.raises(StageError, match="preprocess"):
            run_inference("no_such_volume.mhd", make_config(), StubSegmenter(),
                          StubDetector(), StubClassifier())


class TestWriteCaseReport:
    def test_files_and_rows(self, phantom_volume, tmp_path):
        report = run_inference(phantom_volume, make_config(),
                               StubSegmenter(), StubDetector(), StubClassifier())
        out = str(tmp_path / "case")
        write_case_report(report, out)
        for name in ("report.json", "timings.json", "detections.csv",
                     "predictions.csv"):
            assert os.path.isfile(os.path.join(out, name))
        rows = open(os.path.join(out, "detections.csv")).read().splitlines()
        assert len(rows) - 1 == len(report.detections)
        # timing lives in its own file so report.json stays deterministic
        assert "timings" not in open(os.path.join(out, "report.json")).read()
