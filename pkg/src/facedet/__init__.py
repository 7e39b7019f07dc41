"""CPU-friendly single-shot face detection toolkit.

Square anchors tiled at strides 32/64/128 with a densification scheme that
replicates small anchors onto sub-grids until every scale covers the image at
the same density; a lightweight stride-32 convolutional network with per-layer
detection heads; target assignment, NMS post-processing, augmentation, and
PR/ROC evaluation.
"""

from .anchors import (
    AnchorLayerConfig,
    AnchorSet,
    default_anchor_configs,
    densified_centers,
    feature_map_size,
    generate_anchors,
    tiling_density,
)
from .augment import AugmentConfig, Sample, augment_pipeline
from .evaluate import (
    EvalResult,
    GroundTruthSet,
    evaluate_detections,
    match_detections,
    precision_recall,
    tpr_at_fp,
)
from .network import (
    HeadOutputs,
    ModelWeights,
    NetworkDescriptor,
    WeightFormatError,
    build_network,
    default_descriptor,
    forward,
    inception_forward,
    load_weights,
    save_weights,
    xavier_init,
)
from .postprocess import Detection, PostprocessConfig, decode_all, nms, run_postprocess
from .targets import (
    EncodeVariances,
    TrainingTargets,
    decode_box,
    decode_boxes,
    detection_loss,
    encode_box,
    encode_boxes,
    hard_negative_mine,
    jaccard,
    match_anchors,
    pairwise_jaccard,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorLayerConfig",
    "AnchorSet",
    "AugmentConfig",
    "Detection",
    "EncodeVariances",
    "EvalResult",
    "GroundTruthSet",
    "HeadOutputs",
    "ModelWeights",
    "NetworkDescriptor",
    "PostprocessConfig",
    "Sample",
    "TrainingTargets",
    "WeightFormatError",
    "augment_pipeline",
    "build_network",
    "decode_all",
    "decode_box",
    "decode_boxes",
    "default_anchor_configs",
    "default_descriptor",
    "densified_centers",
    "detection_loss",
    "encode_box",
    "encode_boxes",
    "evaluate_detections",
    "feature_map_size",
    "forward",
    "generate_anchors",
    "hard_negative_mine",
    "inception_forward",
    "jaccard",
    "load_weights",
    "match_anchors",
    "match_detections",
    "nms",
    "pairwise_jaccard",
    "precision_recall",
    "run_postprocess",
    "save_weights",
    "tiling_density",
    "tpr_at_fp",
    "xavier_init",
]
