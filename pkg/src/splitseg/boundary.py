"""Boundary detection from probability fields and from discrete labels.

The differentiable detector multiplies the spatial gradient magnitudes of
the two split-class probability channels, so it responds exactly where both
channels change together, i.e. along their shared interface. The discrete
ground-truth counterpart marks, on both sides, tumour voxels that touch the
other tumour class across a 6-connected face.
"""

from __future__ import annotations

import numpy as np

from .errors import GridTooSmall
from .fields import LabelField3D, ScalarField3D, require_same_dims

# Stencil: central differences with divisor 2 in the interior, one-sided
# first differences on the two boundary planes of each axis, voxel units.


def _axis_gradient(arr: np.ndarray, axis: int) -> np.ndarray:
    out = np.empty_like(arr)
    _axis_gradient_into(arr, axis, out)
    return out


def _axis_gradient_into(arr: np.ndarray, axis: int, out: np.ndarray) -> None:
    src = np.moveaxis(arr, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[1:-1] = (src[2:] - src[:-2]) * 0.5
    dst[0] = src[1] - src[0]
    dst[-1] = src[-1] - src[-2]


def _axis_gradient_adjoint(grad: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`_axis_gradient`: accumulates d(output)/d(input)."""
    out = np.zeros_like(grad)
    _axis_gradient_adjoint_into(grad, axis, out)
    return out


def _axis_gradient_adjoint_into(grad: np.ndarray, axis: int, out: np.ndarray) -> None:
    """Accumulate the stencil transpose into ``out`` (adds, does not overwrite)."""
    g = np.moveaxis(grad, axis, 0)
    o = np.moveaxis(out, axis, 0)
    half = 0.5 * g[1:-1]
    o[2:] += half
    o[:-2] -= half
    o[1] += g[0]
    o[0] -= g[0]
    o[-1] += g[-1]
    o[-2] -= g[-1]


def _check_stencil_dims(dims):
    if min(dims) < 2:
        raise GridTooSmall(f"gradient stencil needs length >= 2 along every axis, got {dims}")


def spatial_gradient(channel: ScalarField3D) -> tuple[ScalarField3D, ScalarField3D, ScalarField3D]:
    """Per-axis spatial gradients of one channel, in voxel units."""
    _check_stencil_dims(channel.dims)
    return tuple(
        ScalarField3D(_axis_gradient(channel.data, axis), channel.spacing) for axis in range(3)
    )


def gradient_magnitude(channel: ScalarField3D) -> ScalarField3D:
    """Pointwise Euclidean norm of the three spatial gradient components."""
    _check_stencil_dims(channel.dims)
    return ScalarField3D(_magnitude_array(channel.data)[0], channel.spacing)


def _magnitude_array(arr: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    comps = [_axis_gradient(arr, axis) for axis in range(3)]
    return np.sqrt(comps[0] ** 2 + comps[1] ** 2 + comps[2] ** 2), comps


def boundary_detector(p1: ScalarField3D, p2: ScalarField3D) -> ScalarField3D:
    """Product of the gradient magnitudes of the two split-class channels."""
    require_same_dims(p1, p2, "detector inputs")
    _check_stencil_dims(p1.dims)
    m1, _ = _magnitude_array(p1.data)
    m2, _ = _magnitude_array(p2.data)
    return ScalarField3D(m1 * m2, p1.spacing)


def gt_split_boundary(labels: LabelField3D) -> LabelField3D:
    """Binary map of the class-1/class-2 interface, two voxels thick.

    A voxel is set iff it carries one split class and at least one
    6-connected neighbour carries the other; background/tumour interfaces
    are not included. The result may be empty.
    """
    lab = labels.data
    is1 = lab == 1
    is2 = lab == 2
    touches2 = np.zeros_like(is1)
    touches1 = np.zeros_like(is1)
    for axis in range(3):
        a1 = np.moveaxis(is1, axis, 0)
        a2 = np.moveaxis(is2, axis, 0)
        t1 = np.moveaxis(touches1, axis, 0)
        t2 = np.moveaxis(touches2, axis, 0)
        t2[:-1] |= a2[1:]
        t2[1:] |= a2[:-1]
        t1[:-1] |= a1[1:]
        t1[1:] |= a1[:-1]
    out = (is1 & touches2) | (is2 & touches1)
    return LabelField3D(out.astype(np.int64), num_classes=2, spacing=labels.spacing)
