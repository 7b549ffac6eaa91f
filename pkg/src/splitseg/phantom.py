"""Deterministic synthetic volumes with a split-tumour ground truth.

Each case is a tumour built from a canal cylinder joined to an ellipsoidal
bulb at a dividing plane; labels on the canal side of the plane are class 1
(intrameatal), the rest of the tumour is class 2 (extrameatal). The image
is a pseudo-T2 rendering (hyperintense tumour, dark canal wall) plus
Gaussian noise from a counter-based generator keyed by seed and voxel
index, so the output is bitwise independent of traversal order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShift, DegenerateSpec, InvalidConfig
from .fields import DEFAULT_SPACING, LabelField3D, ScalarField3D, Spacing

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over a uint64 array; wrapping arithmetic throughout."""
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def counter_noise(seed: int, dims: tuple[int, int, int], sigma: float) -> np.ndarray:
    """Standard-normal noise field where voxel u depends only on (seed, index(u)).

    Index order is the package-wide x-fastest convention. Uses two hashed
    64-bit words per voxel and a Box-Muller transform.
    """
    n = int(np.prod(dims))
    base = _splitmix64(np.array([seed & _MASK64], dtype=np.uint64))
    idx = np.arange(n, dtype=np.uint64)
    h1 = _splitmix64(base + idx * np.uint64(2))
    h2 = _splitmix64(base + idx * np.uint64(2) + np.uint64(1))
    u1 = (h1 >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u2 = (h2 >> np.uint64(11)).astype(np.float64) * 2.0**-53
    z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
    return sigma * z.reshape(dims, order="F")


def derive_seed(master_seed: int, index: int) -> int:
    """Stable per-item seed stream for dataset construction."""
    counter = np.array([((master_seed & _MASK64) + index + 1) & _MASK64], dtype=np.uint64)
    return int(_splitmix64(counter)[0])


@dataclass(frozen=True)
class PhantomSpec:
    """Full geometric and photometric description of one synthetic case."""

    seed: int
    dims: tuple[int, int, int] = (48, 48, 32)
    canal_radius: float = 3.0  # voxels; sampled from [2, 4]
    canal_length: float = 14.0  # voxels of canal rendered behind the plane
    bulb_semi_axes: tuple[float, float, float] = (8.0, 8.0, 8.0)  # sampled from [4, 12]
    plane_point: tuple[float, float, float] = (24.0, 24.0, 16.0)
    plane_normal: tuple[float, float, float] = (1.0, 0.0, 0.0)  # unit, canal on negative side
    bulb_offset: float = 4.0  # bulb center displacement along the normal, voxels
    noise_sigma: float = 0.015
    intensity: tuple[float, float, float] = (0.30, 0.85, 0.0)  # background, tumour, canal wall
    spacing: Spacing = DEFAULT_SPACING

    def __post_init__(self):
        if self.canal_radius <= 0 or self.canal_length <= 0:
            raise InvalidConfig("canal radius and length must be positive")
        if any(a <= 0 for a in self.bulb_semi_axes):
            raise InvalidConfig("bulb semi-axes must be positive")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise sigma must be >= 0")
        n = np.asarray(self.plane_normal, dtype=np.float64)
        if abs(float(np.linalg.norm(n)) - 1.0) > 1e-9:
            raise InvalidConfig("plane normal must be a unit vector")


@dataclass(frozen=True, eq=False)
class PhantomCase:
    case_id: str
    image: ScalarField3D
    labels: LabelField3D  # 0 background, 1 intrameatal, 2 extrameatal
    whole_tumour: LabelField3D  # binary union of classes 1 and 2
    spec: PhantomSpec | None = None  # None for cases loaded from disk


def _plane_signed_distance(spec: PhantomSpec) -> np.ndarray:
    coords = np.indices(spec.dims).astype(np.float64)
    p0 = np.asarray(spec.plane_point, dtype=np.float64)
    n = np.asarray(spec.plane_normal, dtype=np.float64)
    rel = coords - p0.reshape(3, 1, 1, 1)
    return np.tensordot(n, rel, axes=1)


def generate(spec: PhantomSpec, case_id: str = "case") -> PhantomCase:
    """Render one phantom; identical specs yield bitwise-identical cases."""
    coords = np.indices(spec.dims).astype(np.float64)
    p0 = np.asarray(spec.plane_point, dtype=np.float64)
    n = np.asarray(spec.plane_normal, dtype=np.float64)
    rel = coords - p0.reshape(3, 1, 1, 1)
    signed = np.tensordot(n, rel, axes=1)  # > 0 on the bulb side

    # canal segment: cylinder of given radius around the plane normal axis,
    # clipped to the canal side of the plane
    axial = rel - signed[None] * n.reshape(3, 1, 1, 1)
    radial = np.sqrt((axial**2).sum(axis=0))
    canal = (radial <= spec.canal_radius) & (signed <= 0.0) & (signed >= -spec.canal_length)

    # extrameatal bulb: axis-aligned ellipsoid clipped to the far side, so the
    # two primitives meet exactly at the plane and neither leaves slivers on
    # the wrong side
    center = p0 + spec.bulb_offset * n
    axes = np.asarray(spec.bulb_semi_axes, dtype=np.float64)
    bulb_rel = (coords - center.reshape(3, 1, 1, 1)) / axes.reshape(3, 1, 1, 1)
    bulb = ((bulb_rel**2).sum(axis=0) <= 1.0) & (signed > 0.0)

    tumour = canal | bulb
    labels = np.zeros(spec.dims, dtype=np.int64)
    labels[canal] = 1
    labels[bulb] = 2
    if not (labels == 1).any() or not (labels == 2).any():
        raise DegenerateSpec(f"spec produces an empty split class (seed={spec.seed})")

    in_canal_band = (signed <= 0.0) & (signed >= -spec.canal_length)
    wall = (
        (radial > spec.canal_radius)
        & (radial <= spec.canal_radius + 2.0)
        & in_canal_band
        & ~tumour
    )
    bg_level, tumour_level, wall_level = spec.intensity
    image = np.full(spec.dims, bg_level)
    image[wall] = wall_level
    image[tumour] = tumour_level
    # partial-volume rim: the outer voxel ring of the thin canal reads as
    # wall, so the canal-side tumour carries a texture that ends at the
    # dividing plane regardless of canal radius
    rim = canal & (radial > spec.canal_radius - 1.0)
    image[rim] = wall_level
    image = image + counter_noise(spec.seed, spec.dims, spec.noise_sigma)
    # stored at f32 precision so in-memory data equals data round-tripped via disk
    image = image.astype(np.float32).astype(np.float64)

    return PhantomCase(
        case_id=case_id,
        image=ScalarField3D(image, spec.spacing),
        labels=LabelField3D(labels, num_classes=3, spacing=spec.spacing),
        whole_tumour=LabelField3D(tumour.astype(np.int64), num_classes=2, spacing=spec.spacing),
        spec=spec,
    )


def perturb_boundary(case: PhantomCase, shift_voxels: int) -> LabelField3D:
    """Relabel the tumour after sliding the dividing plane along its normal.

    A positive shift moves the plane toward the bulb, growing class 1. The
    whole-tumour mask is unchanged.
    """
    if case.spec is None:
        raise InvalidConfig("case carries no geometry spec; cannot move its plane")
    signed = _plane_signed_distance(case.spec)
    tumour = case.whole_tumour.data != 0
    labels = np.zeros(case.labels.dims, dtype=np.int64)
    labels[tumour & (signed <= float(shift_voxels))] = 1
    labels[tumour & (signed > float(shift_voxels))] = 2
    if not (labels == 1).any() or not (labels == 2).any():
        raise DegenerateShift(f"shift {shift_voxels} empties a split class")
    return LabelField3D(labels, num_classes=3, spacing=case.labels.spacing)


def sample_spec(seed: int, dims: tuple[int, int, int] = (48, 48, 32)) -> PhantomSpec:
    """Draw one spec from the dataset distribution, keyed entirely by ``seed``.

    Canal orientation stays close to the x axis: the dividing plane must be
    expressible from the image cues (the wall shadow ending at the plane),
    and strongly tilted planes put that beyond any per-voxel model, which
    turns every boundary-placement experiment into noise.
    """
    rng = np.random.default_rng(seed)
    h, w, d = dims
    canal_radius = rng.uniform(2.0, 4.0)
    semi = tuple(rng.uniform(4.0, 12.0, size=3))
    point = (
        h / 2.0 + rng.uniform(-2.0, 2.0),
        w / 2.0 + rng.uniform(-1.5, 1.5),
        d / 2.0 + rng.uniform(-1.5, 1.5),
    )
    tilt = rng.uniform(-0.05, 0.05, size=2)
    normal = np.array([1.0, tilt[0], tilt[1]])
    normal /= np.linalg.norm(normal)
    return PhantomSpec(
        seed=seed,
        dims=dims,
        canal_radius=canal_radius,
        canal_length=rng.uniform(10.0, 16.0),
        bulb_semi_axes=semi,
        plane_point=point,
        plane_normal=tuple(normal),
        bulb_offset=rng.uniform(0.3, 0.6) * semi[0],
        noise_sigma=0.015,
        intensity=(0.30, 0.85, 0.0),
    )


_MAX_SPEC_ATTEMPTS = 16


def _generate_case(seed: int, case_id: str, dims) -> PhantomCase:
    for attempt in range(_MAX_SPEC_ATTEMPTS):
        try:
            return generate(sample_spec(derive_seed(seed, attempt), dims), case_id)
        except DegenerateSpec:
            continue
    raise DegenerateSpec(f"no valid spec after {_MAX_SPEC_ATTEMPTS} attempts (seed={seed})")


def make_dataset(
    seed: int,
    n_train: int = 30,
    n_val: int = 10,
    n_test: int = 20,
    dims: tuple[int, int, int] = (48, 48, 32),
) -> tuple[list[PhantomCase], list[PhantomCase], list[PhantomCase]]:
    """Three disjoint case lists with per-case seeds derived from the master seed."""
    if min(n_train, n_val, n_test) < 1:
        raise InvalidConfig("every split needs at least one case")
    counts = {"train": n_train, "val": n_val, "test": n_test}
    splits: dict[str, list[PhantomCase]] = {k: [] for k in counts}
    index = 0
    for name, count in counts.items():
        for i in range(count):
            case_seed = derive_seed(seed, index)
            splits[name].append(_generate_case(case_seed, f"{name}_{i:03d}", dims))
            index += 1
    return splits["train"], splits["val"], splits["test"]
