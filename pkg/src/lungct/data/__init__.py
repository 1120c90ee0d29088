from .annotations import (BENIGN, MALIGNANT, AnnotationError, NoduleAnnotation,
                          malignancy_from_median_score, parse_annotations,
                          write_annotations)
from .metaimage import MetaImageError, load_metaimage, save_metaimage
from .patches import (PATCH_SIZE, NodulePatch, PatchError, crop_patch_at,
                      extract_classifier_patch, load_patch_bundle, save_patch_bundle)
from .phantom import (PhantomPlacementError, PhantomSpec, generate_phantom,
                      lung_ellipsoid_volume_mm3, read_phantom_bundle,
                      write_phantom_bundle)
from .splits import split_dataset
from .yolo import (NODULE_CLASS_ID, LabelError, YoloLabelRecord, load_slice_png,
                   read_yolo_labels, save_slice_png, slice_bounding_boxes,
                   write_yolo_labels)

__all__ = [
    "AnnotationError", "BENIGN", "MALIGNANT", "MetaImageError", "NODULE_CLASS_ID",
    "NodulePatch", "NoduleAnnotation", "LabelError", "PATCH_SIZE", "PatchError",
    "PhantomPlacementError", "PhantomSpec", "YoloLabelRecord", "crop_patch_at",
    "extract_classifier_patch", "generate_phantom", "load_metaimage",
    "load_patch_bundle", "load_slice_png", "lung_ellipsoid_volume_mm3",
    "malignancy_from_median_score", "parse_annotations", "read_phantom_bundle",
    "read_yolo_labels", "save_metaimage", "save_patch_bundle", "save_slice_png",
    "slice_bounding_boxes", "split_dataset", "write_annotations",
    "write_phantom_bundle", "write_yolo_labels",
]
