"""Cascaded lung CT analysis toolkit.

Three trainable stages behind sklearn-style estimators: volumetric lung
segmentation (LungSegmenter), single-stage axial-slice nodule detection
(NoduleDetector), and patch-level malignancy classification
(NoduleClassifier), plus the imaging primitives, dataset preparation,
metrics, and the end-to-end pipeline that connect them.
"""

__version__ = "0.1.0"

from .config import (PipelineConfig, TrainConfig, cls_train_defaults,
                     det_train_defaults, load_pipeline_config, seg_train_defaults)
from .volume import (CANONICAL_CUBE, HU_WINDOW, CropBox, CtVolume, EmptyMaskError,
                     LungMask, OutOfBoundsError, binarize_lung_mask,
                     clip_and_normalize_hu, crop_foreground, extract_axial_slice,
                     resample_to_canonical, voxel_to_world, world_to_voxel)

__all__ = [
    "CANONICAL_CUBE", "CropBox", "CtVolume", "EmptyMaskError", "HU_WINDOW",
    "LungMask", "OutOfBoundsError", "PipelineConfig", "TrainConfig",
    "binarize_lung_mask", "clip_and_normalize_hu", "cls_train_defaults",
    "crop_foreground", "det_train_defaults", "extract_axial_slice",
    "load_pipeline_config", "resample_to_canonical", "seg_train_defaults",
    "voxel_to_world", "world_to_voxel",
]
