"""Voxel-grid data model shared by every module.

A :class:`VoxelGrid` is a dense 3-D scalar lattice with voxel spacing (mm)
and a voxel-to-world affine (RAS+ mm). Data arrays are float32 and are
frozen after construction; operations return new grids. Label maps and
quantitative-map bundles are thin validated wrappers around VoxelGrid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

_GEOM_ATOL = 1e-5


def _as_dims(dims) -> tuple[int, int, int]:
    d = tuple(int(v) for v in dims)
    if len(d) != 3 or any(v <= 0 for v in d):
        raise ValueError(f"dims must be 3 positive integers, got {dims}")
    return d


def _as_spacing(spacing) -> tuple[float, float, float]:
    s = tuple(float(v) for v in spacing)
    if len(s) != 3 or any(v <= 0 for v in s):
        raise ValueError(f"spacing must be 3 positive reals, got {spacing}")
    return s


@dataclass(frozen=True)
class VoxelGrid:
    """3-D scalar volume with spacing and RAS+ voxel-to-world affine.

    ``data[i, j, k]`` is the value of the voxel whose world position is
    ``affine @ (i, j, k, 1)``. All values must be finite.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    affine: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dims", _as_dims(self.dims))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

        aff = np.asarray(self.affine, dtype=np.float64)
        if aff.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got shape {aff.shape}")
        if not np.all(np.isfinite(aff)):
            raise ValueError("affine contains non-finite values")
        if abs(np.linalg.det(aff[:3, :3])) < 1e-12:
            raise ValueError("affine upper-left 3x3 is singular")

        arr = np.asarray(self.data, dtype=np.float32)
        if arr.size != self.dims[0] * self.dims[1] * self.dims[2]:
            raise ValueError(
                f"data has {arr.size} values, dims {self.dims} require "
                f"{self.dims[0] * self.dims[1] * self.dims[2]}"
            )
        arr = arr.reshape(self.dims)
        if not np.all(np.isfinite(arr)):
            raise ValueError("data contains NaN or Inf")

        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        aff = np.ascontiguousarray(aff)
        aff.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "affine", aff)

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0), affine=None) -> "VoxelGrid":
        data = np.asarray(data)
        if affine is None:
            affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
        return cls(dims=data.shape, spacing=spacing, affine=affine, data=data)

    def with_data(self, data) -> "VoxelGrid":
        """New grid with the same geometry and different values."""
        return VoxelGrid(dims=self.dims, spacing=self.spacing, affine=self.affine, data=data)

    def same_geometry(self, other: "VoxelGrid") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, atol=_GEOM_ATOL)
            and np.allclose(self.affine, other.affine, atol=_GEOM_ATOL)
        )

    def voxel_to_world(self, idx) -> np.ndarray:
        """World coordinates (mm) of a voxel index (may be fractional)."""
        v = np.asarray(idx, dtype=np.float64)
        return self.affine[:3, :3] @ v + self.affine[:3, 3]

    @property
    def num_voxels(self) -> int:
        return self.data.size


def _require_same_geometry(a: VoxelGrid, b: VoxelGrid, what: str) -> None:
    if not a.same_geometry(b):
        raise ValueError(f"{what}: grids are not co-registered "
                         f"(dims {a.dims} vs {b.dims})")


@dataclass(frozen=True)
class LabelVolume:
    """Integer tissue-label map plus the label -> name table.

    Every voxel value must be a key of ``label_names`` and label 0 is
    always "background".
    """

    grid: VoxelGrid
    label_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        names = {int(k): str(v) for k, v in self.label_names.items()}
        if names.get(0) != "background":
            raise ValueError('label 0 must be named "background"')
        vals = self.grid.data
        if not np.array_equal(vals, np.rint(vals)) or vals.min() < 0:
            raise ValueError("label volume must contain small nonnegative integers")
        present = set(int(v) for v in np.unique(vals))
        missing = present - set(names)
        if missing:
            raise ValueError(f"voxel labels without a name entry: {sorted(missing)}")
        object.__setattr__(self, "label_names", names)

    def labels_present(self) -> list[int]:
        return [int(v) for v in np.unique(self.grid.data)]

    def mask(self, label: int) -> np.ndarray:
        return self.grid.data == float(label)


_QMRI_BOUNDS = {
    "pd": (0.0, None),
    "r1": (0.0, None),
    "r2s": (0.0, None),
    "mt": (0.0, 100.0),
}


@dataclass(frozen=True)
class QmriVolume:
    """Four co-registered quantitative maps: PD (a.u.), R1 (1/s), R2* (1/s),
    MT saturation (percent)."""

    pd: VoxelGrid
    r1: VoxelGrid
    r2s: VoxelGrid
    mt: VoxelGrid

    def __post_init__(self):
        for name in ("r1", "r2s", "mt"):
            _require_same_geometry(self.pd, getattr(self, name), f"QmriVolume.{name}")
        for name, (lo, hi) in _QMRI_BOUNDS.items():
            vals = getattr(self, name).data
            if lo is not None and vals.min() < lo:
                raise ValueError(f"{name} has values below {lo}")
            if hi is not None and vals.max() > hi:
                raise ValueError(f"{name} has values above {hi}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.pd.dims

    def channels(self) -> dict[str, VoxelGrid]:
        return {"pd": self.pd, "r1": self.r1, "r2s": self.r2s, "mt": self.mt}


def resample(grid: VoxelGrid, target_spacing, interpolation: str = "trilinear") -> VoxelGrid:
    """Resample a grid onto a new voxel spacing.

    The output field of view matches the input's to within one voxel and
    voxel (0, 0, 0) keeps its world position: output voxel j along axis a
    samples input voxel coordinate j * target/source, and the affine is
    scaled accordingly. Images should use "trilinear"; label maps must use
    "nearest".
    """
    target = _as_spacing(target_spacing)
    if interpolation not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    if target == grid.spacing:
        return grid

    factors = np.array(target) / np.array(grid.spacing)
    new_dims = tuple(max(1, int(round(d * s / t)))
                     for d, s, t in zip(grid.dims, grid.spacing, target))

    axes = [np.arange(n, dtype=np.float64) * f for n, f in zip(new_dims, factors)]
    coords = np.meshgrid(*axes, indexing="ij")
    order = 1 if interpolation == "trilinear" else 0
    out = ndimage.map_coordinates(
        grid.data.astype(np.float32), coords, order=order, mode="nearest"
    )

    affine = grid.affine.copy()
    affine[:3, :3] = grid.affine[:3, :3] @ np.diag(factors)
    return VoxelGrid(dims=new_dims, spacing=target, affine=affine, data=out)


def resample_labels(labels: LabelVolume, target_spacing) -> LabelVolume:
    """Nearest-neighbour resampling that preserves the label table."""
    return LabelVolume(
        grid=resample(labels.grid, target_spacing, interpolation="nearest"),
        label_names=labels.label_names,
    )
