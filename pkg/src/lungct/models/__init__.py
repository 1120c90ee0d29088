from .classifier import (CLASS_NAMES, ClassifierOutput, NoduleClassifier,
                         balanced_batches, classify, encode_labels)
from .detector import (Detection2D, NoduleDetector, letterbox, letterbox_labels,
                       unletterbox_detections, write_detections_csv)
from .segmenter import LungSegmenter, keep_largest_components, segment
from .unet3d import SegNetConfig, build_res_unet3d, build_unet3d, dice_loss
from .vit import (ClassifierHead, ViTConfig, VisionTransformer, build_vit,
                  patchify, unpatchify)
from .yolonet import (DEFAULT_ANCHORS, DetNetConfig, DetectionNet,
                      anchors_from_boxes, build_detector, build_targets,
                      decode_predictions, detection_loss, encode_box, giou, nms)

__all__ = [
    "CLASS_NAMES", "ClassifierHead", "ClassifierOutput", "DEFAULT_ANCHORS",
    "Detection2D", "DetNetConfig", "DetectionNet", "LungSegmenter",
    "NoduleClassifier", "NoduleDetector", "SegNetConfig", "ViTConfig",
    "VisionTransformer", "anchors_from_boxes", "balanced_batches",
    "build_detector", "build_res_unet3d", "build_targets", "build_unet3d",
    "build_vit", "classify", "decode_predictions", "detection_loss", "dice_loss",
    "encode_box", "encode_labels", "giou", "keep_largest_components", "letterbox",
    "letterbox_labels", "nms", "patchify", "segment", "unletterbox_detections",
    "unpatchify", "write_detections_csv",
]
