"""Desk-scale segmentation experiment: direct baseline vs two-stage cascade.

The predictor is a per-voxel linear classifier over handcrafted features
(raw and Gaussian-smoothed intensity, normalized coordinates, optional
mask channel), trained by full-batch gradient descent. Stage 1 segments
the whole tumour (2 classes, cross-entropy + Dice); stage 2 splits it
(3 classes) with the whole-tumour mask as an extra input channel and the
distance-weighted boundary term added to the loss. At test time the
cascade feeds stage-2 the stage-1 predicted mask and forces voxels outside
that mask to background.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .boundary import gt_split_boundary
from .edt import DistanceMap, DistanceUnit, edt_exact
from .errors import InvalidConfig, MissingMask, TrainingDiverged
from .fields import LabelField3D, LogitField, argmax_labels, softmax_array
from .losses import (
    BoundaryLossConfig,
    LossFn,
    LossOutput,
    make_combined_loss_fn,
    make_overlap_loss_fn,
)
from .metrics import MetricsReport, assd, dice_score
from .phantom import PhantomCase

STAGES = ("direct", "stage1", "stage2")


@dataclass(frozen=True)
class FeatureExtractorConfig:
    smoothing_sigmas: tuple[float, ...] = (1.0, 2.0)
    include_intensity: bool = True
    include_coords: bool = True
    include_mask: bool = False

    def __post_init__(self):
        if not (
            self.include_intensity or self.include_coords or self.include_mask
            or len(self.smoothing_sigmas) > 0
        ):
            raise InvalidConfig("feature config enables no features")
        if any(s <= 0 for s in self.smoothing_sigmas):
            raise InvalidConfig("smoothing sigmas must be positive")

    @property
    def num_features(self) -> int:
        return (
            int(self.include_intensity)
            + len(self.smoothing_sigmas)
            + 3 * int(self.include_coords)
            + int(self.include_mask)
        )


DEFAULT_CLASS_WEIGHTS = (1.0, 6.0, 2.0)  # background, intrameatal, extrameatal


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one stage.

    The cross-entropy class weights lean on the two tumour classes in
    proportion to their scarcity; without that counterweight the boundary
    term can buy loss by flattening the small class into argmax oblivion.
    The boundary epsilon default is a training stabilizer: the term's
    gradient scales like 1/(detector mass + epsilon), and early iterations
    have almost no detector mass.
    """

    stage: str = "stage2"
    gamma: float = 0.5
    tau: float = 4.0
    epsilon: float = 0.1
    learning_rate: float = 0.5
    iterations: int = 300
    seed: int = 0
    class_weights: tuple[float, ...] | None = DEFAULT_CLASS_WEIGHTS
    features: FeatureExtractorConfig | None = None  # resolved per stage when None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise InvalidConfig(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning rate must be positive")
        if self.iterations < 1:
            raise InvalidConfig("iterations must be positive")
        # validates tau / epsilon / gamma ranges
        BoundaryLossConfig(self.tau, self.epsilon, self.gamma)

    @property
    def boundary(self) -> BoundaryLossConfig:
        return BoundaryLossConfig(self.tau, self.epsilon, self.gamma)

    def resolved_features(self) -> FeatureExtractorConfig:
        """Feature set for this stage; the mask channel tracks the cascade stage."""
        base = self.features if self.features is not None else FeatureExtractorConfig()
        return replace(base, include_mask=self.stage == "stage2")

    @property
    def num_classes(self) -> int:
        return 2 if self.stage == "stage1" else 3


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray  # (C, F)
    bias: np.ndarray  # (C,)
    features: FeatureExtractorConfig
    stage: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise InvalidConfig("model parameters must be finite")
        if w.shape[1] != self.features.num_features or b.shape != (w.shape[0],):
            raise InvalidConfig(f"inconsistent parameter shapes {w.shape} / {b.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]


def _smooth_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (kernel.size - 1) // 2
    pad = [(0, 0)] * 3
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="reflect")
    out = np.zeros_like(arr)
    view = np.moveaxis(padded, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    n = arr.shape[axis]
    for k, w in enumerate(kernel):
        dst += w * view[k : k + n]
    return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled, truncated (radius = round(3 sigma)) and normalized 1-D kernel."""
    radius = max(1, int(round(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding (index -1 mirrors to 1)."""
    kernel = gaussian_kernel(sigma)
    out = arr
    for axis in range(3):
        out = _smooth_axis(out, kernel, axis)
    return out


def _standardize(channel: np.ndarray) -> np.ndarray:
    mean = channel.mean()
    std = channel.std()
    if std < 1e-12:
        return np.zeros_like(channel)
    return (channel - mean) / std


def extract_features(
    case: PhantomCase,
    mask: LabelField3D | None,
    cfg: FeatureExtractorConfig,
) -> np.ndarray:
    """Per-voxel feature stack (F, H, W, D), each channel standardized over the volume."""
    if cfg.include_mask and mask is None:
        raise MissingMask("feature config includes a mask channel but no mask was given")
    img = case.image.data
    channels: list[np.ndarray] = []
    if cfg.include_intensity:
        channels.append(img)
    for sigma in cfg.smoothing_sigmas:
        channels.append(gaussian_smooth(img, sigma))
    if cfg.include_coords:
        for axis, size in enumerate(img.shape):
            ramp = np.linspace(-1.0, 1.0, size) if size > 1 else np.zeros(size)
            shape = [1, 1, 1]
            shape[axis] = size
            channels.append(np.broadcast_to(ramp.reshape(shape), img.shape))
    if cfg.include_mask:
        channels.append((mask.data != 0).astype(np.float64))
    return np.stack([_standardize(c) for c in channels])


def _split_distance_map(case: PhantomCase) -> DistanceMap:
    return edt_exact(gt_split_boundary(case.labels), DistanceUnit.VOXELS)


def _stage_loss(cfg: TrainConfig, target: LabelField3D, phi: DistanceMap | None) -> LossFn:
    # class weights configured for the split task do not apply to the
    # 2-class whole-tumour stage; that stage falls back to uniform
    weights = cfg.class_weights
    if weights is not None and len(weights) != cfg.num_classes:
        weights = None
    if cfg.stage == "stage2":
        return make_combined_loss_fn(target, phi, cfg.boundary, weights)
    return make_overlap_loss_fn(target, cfg.num_classes, weights)


def _case_target(case: PhantomCase, stage: str) -> LabelField3D:
    return case.whole_tumour if stage == "stage1" else case.labels


def _forward_backward(
    weights: np.ndarray,
    bias: np.ndarray,
    feats: np.ndarray,
    loss_fn: LossFn,
    dims: tuple[int, int, int],
    spacing,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and parameter gradients for one case.

    Logits are ``weights @ features + bias`` per voxel; the loss gradient
    with respect to the logits chains to the parameters by contraction with
    the feature stack.
    """
    num_classes, num_feats = weights.shape
    flat = feats.reshape(num_feats, -1)
    logits = weights @ flat + bias[:, None]
    out = loss_fn(LogitField(logits.reshape((num_classes,) + dims), spacing))
    g = out.grad.data.reshape(num_classes, -1)
    return out.value, g @ flat.T, g.sum(axis=1)


def train(
    cases: Sequence[PhantomCase],
    cfg: TrainConfig,
) -> tuple[LinearModel, list[float]]:
    """Full-batch gradient descent; deterministic given the config seed.

    Stage 2 uses ground-truth whole-tumour masks as the mask feature and a
    per-case distance map to the ground-truth split boundary, computed once
    up front (it is constant during training).
    """
    if not cases:
        raise InvalidConfig("training set is empty")
    fcfg = cfg.resolved_features()
    num_classes = cfg.num_classes

    prepared = []
    for case in cases:
        mask = case.whole_tumour if fcfg.include_mask else None
        feats = extract_features(case, mask, fcfg)
        target = _case_target(case, cfg.stage)
        phi = _split_distance_map(case) if cfg.stage == "stage2" else None
        prepared.append((feats, _stage_loss(cfg, target, phi), case.labels.dims, case.image.spacing))

    rng = np.random.default_rng(cfg.seed)
    weights = 0.01 * rng.standard_normal((num_classes, fcfg.num_features))
    bias = np.zeros(num_classes)
    n = len(prepared)

    curve: list[float] = []
    for _ in range(cfg.iterations):
        total = 0.0
        grad_w = np.zeros_like(weights)
        grad_b = np.zeros_like(bias)
        for feats, loss_fn, dims, spacing in prepared:
            value, gw, gb = _forward_backward(weights, bias, feats, loss_fn, dims, spacing)
            total += value
            grad_w += gw
            grad_b += gb
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise TrainingDiverged(f"loss became non-finite at iteration {len(curve)}")
        curve.append(mean_loss)
        weights = weights - cfg.learning_rate * grad_w / n
        bias = bias - cfg.learning_rate * grad_b / n

    return LinearModel(weights, bias, fcfg, cfg.stage), curve


def predict_labels(
    model: LinearModel, case: PhantomCase, mask: LabelField3D | None = None
) -> LabelField3D:
    """Argmax class map of the model on one case."""
    feats = extract_features(case, mask, model.features)
    flat = feats.reshape(model.features.num_features, -1)
    logits = (model.weights @ flat + model.bias[:, None]).reshape(
        (model.num_classes,) + case.labels.dims
    )
    prob = softmax_array(logits)
    labels = np.argmax(prob, axis=0)
    return LabelField3D(labels, num_classes=model.num_classes, spacing=case.labels.spacing)


def predict_split_within_mask(
    model: LinearModel, case: PhantomCase, mask: LabelField3D
) -> LabelField3D:
    """Cascade recombination: split the mask region, keep background outside.

    Voxels inside the mask take the better of the two tumour classes;
    voxels outside are background. The predicted whole tumour therefore
    equals the mask exactly.
    """
    feats = extract_features(case, mask, model.features)
    flat = feats.reshape(model.features.num_features, -1)
    logits = (model.weights @ flat + model.bias[:, None]).reshape(
        (model.num_classes,) + case.labels.dims
    )
    split = 1 + np.argmax(softmax_array(logits)[1:], axis=0)
    labels = np.where(mask.data != 0, split, 0)
    return LabelField3D(labels, num_classes=model.num_classes, spacing=case.labels.spacing)


def evaluate_case(
    case: PhantomCase,
    predicted: LabelField3D,
    gamma: float,
    stage: str,
) -> MetricsReport:
    """Per-case Dice (all classes plus whole tumour) and split-boundary surface distance."""
    dice = {c: dice_score(predicted, case.labels, c) for c in range(3)}
    pred_wt = LabelField3D(
        (predicted.data != 0).astype(np.int64), 2, spacing=predicted.spacing
    )
    wt = dice_score(pred_wt, case.whole_tumour, 1)
    pred_boundary = gt_split_boundary(predicted)
    ref_boundary = gt_split_boundary(case.labels)
    assd_mm = assd(pred_boundary, ref_boundary)
    if tuple(case.labels.spacing) == (1.0, 1.0, 1.0):
        assd_vox = assd_mm
    else:
        assd_vox = assd(pred_boundary, ref_boundary, spacing=(1.0, 1.0, 1.0))
    return MetricsReport(
        case_id=case.case_id,
        gamma=gamma,
        stage=stage,
        dice_per_class=dice,
        dice_wt=wt,
        assd_mm=assd_mm,
        assd_vox=assd_vox,
    )


def run_baseline(
    train_set: Sequence[PhantomCase],
    test_set: Sequence[PhantomCase],
    cfg: TrainConfig,
) -> list[MetricsReport]:
    """Direct 3-class segmentation from the image alone; no boundary term, no mask."""
    cfg = replace(cfg, stage="direct")
    model, _ = train(train_set, cfg)
    return [
        evaluate_case(case, predict_labels(model, case), gamma=0.0, stage="direct")
        for case in test_set
    ]


def run_two_stage(
    train_set: Sequence[PhantomCase],
    test_set: Sequence[PhantomCase],
    cfg: TrainConfig,
    test_mask_source: str = "predicted",
    stage1_model: LinearModel | None = None,
) -> list[MetricsReport]:
    """Train the cascade, then evaluate with stage-1 masks feeding stage 2.

    ``test_mask_source`` may be "ground_truth" to rerun the evaluation with
    oracle masks (used to measure how much stage-1 errors cost stage 2).
    A pre-trained whole-tumour model may be passed in; stage 1 does not
    depend on gamma, so sweeps can reuse it. Stage-2 tumour predictions are
    confined to the stage-1 mask.
    """
    if test_mask_source not in ("predicted", "ground_truth"):
        raise InvalidConfig(f"unknown mask source {test_mask_source!r}")
    if stage1_model is None:
        stage1_model, _ = train(train_set, replace(cfg, stage="stage1"))
    elif stage1_model.stage != "stage1":
        raise InvalidConfig(f"stage-1 model expected, got {stage1_model.stage!r}")
    stage2_model, _ = train(train_set, replace(cfg, stage="stage2"))
    reports = []
    for case in test_set:
        if test_mask_source == "ground_truth":
            mask = case.whole_tumour
        else:
            mask = predict_labels(stage1_model, case)
        predicted = predict_split_within_mask(stage2_model, case, mask)
        reports.append(evaluate_case(case, predicted, gamma=cfg.gamma, stage="stage2"))
    return reports
