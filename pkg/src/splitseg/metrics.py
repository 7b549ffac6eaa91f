"""Segmentation evaluation: overlap, surface distance, and paired significance.

The surface metric operates on boundary voxel sets (see
:func:`splitseg.boundary.gt_split_boundary` for how split surfaces are
extracted) and measures point-to-set Euclidean distance between voxel
centers in millimetres. Cases where exactly one surface is empty get an
infinite distance; they are excluded from percentile summaries but counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .edt import DistanceUnit, edt_exact
from .errors import EmptySample, InsufficientData, ShapeMismatch
from .fields import LabelField3D, require_same_dims


@dataclass(frozen=True)
class MetricsReport:
    """Per-case evaluation record."""

    case_id: str
    gamma: float
    stage: str
    dice_per_class: dict[int, float]
    dice_wt: float
    assd_mm: float
    assd_vox: float
    components: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for c, v in self.dice_per_class.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"dice for class {c} out of [0, 1]: {v}")
        if self.assd_mm < 0.0 or self.assd_vox < 0.0:
            raise ValueError("surface distances must be non-negative")


def dice_score(pred: LabelField3D, gt: LabelField3D, class_id: int) -> float:
    """Overlap 2|A n B| / (|A| + |B|) for one class; 1 if both empty, 0 if one is."""
    require_same_dims(pred, gt, "dice inputs")
    a = pred.data == class_id
    b = gt.data == class_id
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def assd(
    pred_boundary: LabelField3D,
    gt_boundary: LabelField3D,
    spacing: Sequence[float] | None = None,
) -> float:
    """Average symmetric surface distance between two boundary voxel sets, in mm.

    Returns 0.0 when both sets are empty and ``inf`` when exactly one is.
    ``spacing`` overrides the spacing carried by the fields; pass (1, 1, 1)
    to measure in voxel units.
    """
    require_same_dims(pred_boundary, gt_boundary, "surface sets")
    if spacing is None:
        if pred_boundary.spacing != gt_boundary.spacing:
            raise ShapeMismatch(
                f"surface sets disagree on spacing: "
                f"{pred_boundary.spacing} vs {gt_boundary.spacing}"
            )
        spacing = pred_boundary.spacing
    a = pred_boundary.data != 0
    b = gt_boundary.data != 0
    n_a, n_b = int(a.sum()), int(b.sum())
    if n_a == 0 and n_b == 0:
        return 0.0
    if n_a == 0 or n_b == 0:
        return math.inf
    sp = tuple(float(s) for s in spacing)
    d_to_b = edt_exact(LabelField3D(b.astype(np.int64), 2, sp), DistanceUnit.MILLIMETRES)
    d_to_a = edt_exact(LabelField3D(a.astype(np.int64), 2, sp), DistanceUnit.MILLIMETRES)
    total = float(d_to_b.field.data[a].sum() + d_to_a.field.data[b].sum())
    return total / (n_a + n_b)


class Summary(NamedTuple):
    median: float
    p25: float
    p75: float
    n_excluded: int


def summarize(values: Sequence[float]) -> Summary:
    """Median and quartiles by linear interpolation; infinite entries excluded."""
    arr = np.asarray(list(values), dtype=np.float64)
    finite = arr[np.isfinite(arr)]
    n_excluded = int(arr.size - finite.size)
    if finite.size == 0:
        raise EmptySample("no finite values to summarize")
    median, p25, p75 = np.percentile(finite, [50.0, 25.0, 75.0], method="linear")
    return Summary(float(median), float(p25), float(p75), n_excluded)


class WilcoxonResult(NamedTuple):
    statistic: float  # signed rank sum: sum of sign(d_i) * rank(|d_i|)
    p_value: float  # two-sided
    n_used: int  # pairs remaining after zero differences are dropped


EXACT_LIMIT = 20


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(doubled_ranks: np.ndarray, w2_plus: int) -> float:
    """Exact two-sided tail mass of the signed-rank statistic.

    Builds the null distribution of the (doubled) positive rank sum over all
    2^n sign assignments of the observed ranks, ties included, then sums the
    symmetric two-sided region |S| >= |S_observed|.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    s_abs = abs(2 * w2_plus - total)
    hi = (total + s_abs) // 2
    lo = (total - s_abs) // 2
    n = doubled_ranks.size
    p = (counts[hi:].sum() + counts[: lo + 1].sum()) / float(2**n)
    return min(1.0, float(p))


def _normal_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    """Normal approximation with tie correction and continuity correction."""
    n = ranks.size
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float((tie_counts**3 - tie_counts).sum()) / 48.0
    if var <= 0.0:
        return 1.0
    d = max(abs(w_plus - mean) - 0.5, 0.0)
    z = d / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> WilcoxonResult:
    """Two-sided Wilcoxon matched-pairs signed-rank test.

    Zero differences are discarded; ties among |differences| get average
    ranks. The p-value is exact (full sign-assignment distribution) for up
    to 20 usable pairs and a tie/continuity-corrected normal approximation
    beyond that.
    """
    xa = np.asarray(list(x), dtype=np.float64)
    ya = np.asarray(list(y), dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ShapeMismatch(f"paired samples must be equal-length 1-D, got {xa.shape} vs {ya.shape}")
    diff = xa - ya
    diff = diff[diff != 0.0]
    n = diff.size
    if n < 5:
        raise InsufficientData(f"need >= 5 non-zero differences, got {n}")
    ranks = _average_ranks(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    statistic = float((np.sign(diff) * ranks).sum())
    if n <= EXACT_LIMIT:
        doubled = np.round(2.0 * ranks).astype(np.int64)
        p = _exact_two_sided_p(doubled, int(round(2.0 * w_plus)))
    else:
        p = _normal_two_sided_p(ranks, w_plus)
    return WilcoxonResult(statistic, p, n)
