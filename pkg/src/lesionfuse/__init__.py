"""Two-branch dermoscopy lesion classifier.

Hand-crafted color/texture descriptors feed a from-scratch random forest;
a small VGG-style convnet classifies 256x256 patches; the two probability
vectors are fused with a tunable weight and thresholded at 0.5.
"""

from .cnn import CnnModel, TrainConfig, build_cnn, forward, predict_image, softmax, train_cnn
from .errors import BundleError, DataError, LesionFuseError
from .features import FEATURE_DIM, FEATURE_LAYOUT, final_feature_vector
from .forest import Forest, ForestParams, oob_error, predict_proba, train_forest
from .fusion import EvalReport, auc, classify, evaluate, fuse, tune_weight
from .imaging import Patch, augment, extract_patches, load_image, resize_bilinear, to_grayscale
from .pipeline import (
    DatasetRecord,
    ModelBundle,
    TaskId,
    load_bundle,
    load_labels,
    run_evaluate,
    run_predict,
    run_train,
    save_bundle,
    task_label,
)
from .roi import crop_lesion, largest_component, lesion_bbox, otsu_threshold

__version__ = "0.1.0"

__all__ = [
    "BundleError",
    "CnnModel",
    "DataError",
    "DatasetRecord",
    "EvalReport",
    "FEATURE_DIM",
    "FEATURE_LAYOUT",
    "Forest",
    "ForestParams",
    "LesionFuseError",
    "ModelBundle",
    "Patch",
    "TaskId",
    "TrainConfig",
    "auc",
    "augment",
    "build_cnn",
    "classify",
    "crop_lesion",
    "evaluate",
    "extract_patches",
    "final_feature_vector",
    "forward",
    "fuse",
    "largest_component",
    "lesion_bbox",
    "load_bundle",
    "load_image",
    "load_labels",
    "oob_error",
    "otsu_threshold",
    "predict_image",
    "predict_proba",
    "resize_bilinear",
    "run_evaluate",
    "run_predict",
    "run_train",
    "save_bundle",
    "softmax",
    "task_label",
    "to_grayscale",
    "train_cnn",
    "train_forest",
    "tune_weight",
]
