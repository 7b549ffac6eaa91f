"""Split-region 3D segmentation toolkit.

Numerics for a distance-weighted boundary loss with hand-derived
gradients, exact Euclidean distance transforms, surface-distance metrics,
deterministic synthetic phantoms, and a two-stage desk-scale experiment
pipeline.
"""

from .boundary import boundary_detector, gradient_magnitude, gt_split_boundary, spatial_gradient
from .edt import DistanceMap, DistanceUnit, edt_brute_force, edt_exact
from .errors import SplitSegError
from .fields import (
    LabelField3D,
    LogitField,
    ProbabilityField,
    ScalarField3D,
    argmax_labels,
    one_hot,
    softmax,
)
from .losses import (
    BoundaryLossConfig,
    LossOutput,
    boundary_distance_loss,
    combined_loss,
    cross_entropy,
    gradcheck,
    soft_dice_loss,
)
from .metrics import MetricsReport, assd, dice_score, summarize, wilcoxon_signed_rank
from .phantom import PhantomCase, PhantomSpec, generate, make_dataset, perturb_boundary
from .pipeline import (
    FeatureExtractorConfig,
    LinearModel,
    TrainConfig,
    extract_features,
    predict_labels,
    predict_split_within_mask,
    run_baseline,
    run_two_stage,
    train,
)
from .reports import emit_report
from .volume_io import read_nifti1, read_volume, write_volume

__all__ = [
    "BoundaryLossConfig",
    "DistanceMap",
    "DistanceUnit",
    "FeatureExtractorConfig",
    "LabelField3D",
    "LinearModel",
    "LogitField",
    "LossOutput",
    "MetricsReport",
    "PhantomCase",
    "PhantomSpec",
    "ProbabilityField",
    "ScalarField3D",
    "SplitSegError",
    "TrainConfig",
    "argmax_labels",
    "assd",
    "boundary_detector",
    "boundary_distance_loss",
    "combined_loss",
    "cross_entropy",
    "dice_score",
    "edt_brute_force",
    "edt_exact",
    "emit_report",
    "extract_features",
    "generate",
    "gradcheck",
    "gradient_magnitude",
    "gt_split_boundary",
    "make_dataset",
    "one_hot",
    "perturb_boundary",
    "predict_labels",
    "predict_split_within_mask",
    "read_nifti1",
    "read_volume",
    "run_baseline",
    "run_two_stage",
    "softmax",
    "soft_dice_loss",
    "spatial_gradient",
    "summarize",
    "train",
    "wilcoxon_signed_rank",
    "write_volume",
]

__version__ = "0.1.0"
