"""mrisynth: physics-based synthetic MRI from tissue label maps.

The engine samples quantitative parameter maps (PD, R1, R2*, MT) from
label-conditioned Gaussian-mixture priors, pushes them through closed-form
MRI sequence forward models with randomized acquisition parameters,
corrupts the result with realistic acquisition artifacts, and ships the
sliding-window / TTA / Dice-HD95 harness needed to evaluate segmentation
models on such data.

Conventions (fixed across the whole package):
  * volumes are 3-D arrays indexed (i, j, k), float32 data, float64
    accumulations;
  * the affine maps homogeneous voxel indices to RAS+ world millimetres;
  * on-disk format is NIfTI-1 only.
"""

from mrisynth.volume import VoxelGrid, LabelVolume, QmriVolume, resample
from mrisynth.nifti import read_nifti, write_nifti, NiftiError

__version__ = "0.1.0"

__all__ = [
    "VoxelGrid",
    "LabelVolume",
    "QmriVolume",
    "resample",
    "read_nifti",
    "write_nifti",
    "NiftiError",
    "__version__",
]
