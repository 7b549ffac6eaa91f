"""Exact Euclidean distance transform from a binary source set.

Three-pass separable lower-envelope (parabola) transform on squared
distances, one pass per axis, then a square root. Distances are measured
between voxel centers. In millimetre mode the per-axis offsets are scaled
by the voxel spacing before squaring; in voxel mode spacing is ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptySource, GridTooLarge
from .fields import LabelField3D, ScalarField3D


class DistanceUnit(str, Enum):
    VOXELS = "voxels"
    MILLIMETRES = "millimetres"


@dataclass(frozen=True, eq=False)
class DistanceMap:
    """Non-negative distance-to-source field; zero exactly on source voxels."""

    field: ScalarField3D
    unit: DistanceUnit


def _envelope_pass(f: np.ndarray, step: float, big: float) -> np.ndarray:
    """One lower-envelope pass along the last axis of a (L, n) bundle of lines.

    Computes ``d[l, q] = min_v(f[l, v] + (step * (q - v))**2)`` for every line
    simultaneously; the parabola stack (v, z, k) is maintained per line so the
    amortized work stays O(n) per line.
    """
    lines, n = f.shape
    if n == 1:
        return f.copy()
    x = np.arange(n, dtype=np.float64) * step
    fx = f + x * x  # f[q] + x_q^2, the parabola heights at their own abscissae

    rows = np.arange(lines)
    v = np.zeros((lines, n), dtype=np.intp)  # parabola site index stack
    z = np.full((lines, n + 1), np.inf)  # envelope breakpoints
    z[:, 0] = -np.inf
    k = np.zeros(lines, dtype=np.intp)

    for q in range(1, n):
        vk = v[rows, k]
        s = (fx[:, q] - fx[rows, vk]) / (2.0 * (x[q] - x[vk]))
        while True:
            pop = s <= z[rows, k]
            if not pop.any():
                break
            k[pop] -= 1
            vk = v[rows, k]
            s_new = (fx[:, q] - fx[rows, vk]) / (2.0 * (x[q] - x[vk]))
            s = np.where(pop, s_new, s)
        k += 1
        v[rows, k] = q
        z[rows, k] = s
        z[rows, k + 1] = np.inf

    d = np.empty_like(f)
    k[:] = 0
    for q in range(n):
        xq = x[q]
        while True:
            advance = z[rows, k + 1] < xq
            if not advance.any():
                break
            k[advance] += 1
        vk = v[rows, k]
        d[:, q] = (xq - x[vk]) ** 2 + f[rows, vk]
    return d


def _squared_edt(source: np.ndarray, steps: tuple[float, float, float]) -> np.ndarray:
    # big must exceed any true squared distance so unreachable lines never win,
    # yet stay small enough that big + x^2 keeps full precision in the envelope.
    diag = sum(((n - 1) * h) ** 2 for n, h in zip(source.shape, steps))
    big = 4.0 * diag + 1e6
    d2 = np.where(source, 0.0, big)
    for axis in range(3):
        moved = np.moveaxis(d2, axis, -1)
        shape = moved.shape
        flat = np.ascontiguousarray(moved).reshape(-1, shape[-1])
        flat = _envelope_pass(flat, steps[axis], big)
        d2 = np.moveaxis(flat.reshape(shape), -1, axis)
    return d2


def _as_source_mask(source: LabelField3D) -> np.ndarray:
    mask = source.data != 0
    if not mask.any():
        raise EmptySource("distance transform requires at least one source voxel")
    return mask


def _steps(source: LabelField3D, unit: DistanceUnit) -> tuple[float, float, float]:
    if DistanceUnit(unit) is DistanceUnit.MILLIMETRES:
        return source.spacing
    return (1.0, 1.0, 1.0)


def edt_exact(source: LabelField3D, unit: DistanceUnit = DistanceUnit.VOXELS) -> DistanceMap:
    """Exact distance of every voxel to the nearest non-zero source voxel."""
    unit = DistanceUnit(unit)
    mask = _as_source_mask(source)
    d2 = _squared_edt(mask, _steps(source, unit))
    phi = np.sqrt(d2)
    phi[mask] = 0.0
    return DistanceMap(ScalarField3D(phi, source.spacing), unit)


BRUTE_FORCE_LIMIT = 32**3

_CHUNK = 2048  # query voxels per block; bounds peak memory of the all-pairs matrix


def edt_brute_force(source: LabelField3D, unit: DistanceUnit = DistanceUnit.VOXELS) -> DistanceMap:
    """Exhaustive all-pairs oracle with the same contract as :func:`edt_exact`.

    Guarded to grids of at most 32^3 voxels; only meant for verification.
    """
    unit = DistanceUnit(unit)
    mask = _as_source_mask(source)
    if mask.size > BRUTE_FORCE_LIMIT:
        raise GridTooLarge(f"brute-force transform limited to {BRUTE_FORCE_LIMIT} voxels")
    steps = np.array(_steps(source, unit))
    src = np.argwhere(mask) * steps  # (k, 3) physical coordinates
    coords = np.indices(mask.shape).reshape(3, -1).T * steps  # (n, 3)
    out = np.empty(coords.shape[0])
    for start in range(0, coords.shape[0], _CHUNK):
        block = coords[start : start + _CHUNK]
        diff = block[:, None, :] - src[None, :, :]
        out[start : start + _CHUNK] = np.sqrt((diff * diff).sum(axis=2).min(axis=1))
    phi = out.reshape(mask.shape)
    phi[mask] = 0.0
    return DistanceMap(ScalarField3D(phi, source.spacing), unit)
