"""Core 3D grid types and elementary per-voxel transforms.

Conventions shared by every module in the package:

* A volume has dims ``(H, W, D)``; axis 0 is x (length H), axis 1 is y
  (length W), axis 2 is z (length D). Arrays are indexed ``data[x, y, z]``.
* The flat (serialized) voxel order is x-fastest: linear index
  ``x + H * (y + W * z)``, i.e. ``data.ravel(order="F")``.
* ``spacing`` is the physical voxel size ``(sx, sy, sz)`` in mm, default
  isotropic 1 mm.

All operations are pure functions over inputs that are treated as
immutable; none of them mutates its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidField, InvalidLabel, ShapeMismatch

Spacing = tuple[float, float, float]

DEFAULT_SPACING: Spacing = (1.0, 1.0, 1.0)


def _check_spacing(spacing) -> Spacing:
    s = tuple(float(v) for v in spacing)
    if len(s) != 3 or any(not np.isfinite(v) or v <= 0.0 for v in s):
        raise InvalidField(f"spacing must be three positive finite values, got {spacing!r}")
    return s


@dataclass(frozen=True, eq=False)
class ScalarField3D:
    """Real-valued H x W x D grid with per-axis physical spacing."""

    data: np.ndarray
    spacing: Spacing = DEFAULT_SPACING

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise InvalidField(f"scalar field must be 3-D, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class LabelField3D:
    """Integer class id per voxel; every value lies in [0, num_classes)."""

    data: np.ndarray
    num_classes: int = 2
    spacing: Spacing = DEFAULT_SPACING

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise InvalidField(f"label field must be 3-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise InvalidLabel("labels must be integers")
            arr = arr.astype(np.int64)
        else:
            arr = arr.astype(np.int64)
        if self.num_classes < 1:
            raise InvalidLabel(f"num_classes must be >= 1, got {self.num_classes}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
            raise InvalidLabel(
                f"labels must lie in [0, {self.num_classes}), "
                f"got range [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class ProbabilityField:
    """C-channel stack of scalar fields forming a per-voxel simplex."""

    data: np.ndarray  # (C, H, W, D)
    spacing: Spacing = DEFAULT_SPACING

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[0] < 2:
            raise InvalidField(f"probability field must be (C>=2, H, W, D), got shape {arr.shape}")
        if arr.size and (arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9):
            raise InvalidField("probabilities out of [0, 1]")
        sums = arr.sum(axis=0)
        if arr.size and np.abs(sums - 1.0).max() > 1e-6:
            raise InvalidField("per-voxel channel sums deviate from 1 by more than 1e-6")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def num_classes(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def channel(self, c: int) -> ScalarField3D:
        return ScalarField3D(self.data[c], self.spacing)


@dataclass(frozen=True, eq=False)
class LogitField:
    """C-channel pre-softmax real field; the variable losses differentiate against."""

    data: np.ndarray  # (C, H, W, D)
    spacing: Spacing = DEFAULT_SPACING

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise InvalidField(f"logit field must be (C, H, W, D), got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise InvalidField("logits contain non-finite values")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def num_classes(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def channel(self, c: int) -> ScalarField3D:
        return ScalarField3D(self.data[c], self.spacing)


def require_same_dims(a, b, what: str = "fields"):
    if tuple(a.dims) != tuple(b.dims):
        raise ShapeMismatch(f"{what} have different dims: {a.dims} vs {b.dims}")


def softmax_array(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax over axis 0 of a (C, ...) array."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=0, keepdims=True)
    return shifted


def softmax(logits: LogitField) -> ProbabilityField:
    """Per-voxel softmax over channels, stabilized by max subtraction."""
    return ProbabilityField(softmax_array(logits.data), logits.spacing)


def one_hot(labels: LabelField3D, num_classes: int) -> ProbabilityField:
    """Encode labels as a probability field with exactly one unit channel per voxel."""
    if labels.data.size and labels.data.max() >= num_classes:
        raise InvalidLabel(
            f"label {labels.data.max()} out of range for num_classes={num_classes}"
        )
    out = np.zeros((num_classes,) + labels.dims, dtype=np.float64)
    for c in range(num_classes):
        out[c] = labels.data == c
    return ProbabilityField(out, labels.spacing)


def argmax_labels(prob: ProbabilityField) -> LabelField3D:
    """Per-voxel index of the maximal channel; ties go to the lowest class index."""
    return LabelField3D(
        np.argmax(prob.data, axis=0), num_classes=prob.num_classes, spacing=prob.spacing
    )
