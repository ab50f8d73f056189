"""Sampling quantitative maps from label maps under mixture priors.

``sample_qmri`` draws a (PD, R1, R2*, MT) 4-vector at every voxel from the
Gaussian mixture of that voxel's label. The underlying randomness is drawn
once for the whole grid, independent of the label map content: a uniform
variate per voxel selects the mixture component and a standard normal per
voxel and channel supplies the Gaussian draw. Editing one label's prior
therefore cannot change the values sampled inside any other label.

Lesions are modelled as binary masks stamped over healthy labels:
``generate_lesion_mask`` grows irregular blobs from ellipsoid envelopes
perturbed by smoothed noise, and ``stamp_lesion`` relabels the masked
voxels that belong to the allowed replacement set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mrisynth.priors import CHANNELS, TissuePriorSet
from mrisynth.seeds import make_rng
from mrisynth.volume import LabelVolume, QmriVolume, VoxelGrid

_FWHM_TO_SIGMA = 1.0 / np.sqrt(8.0 * np.log(2.0))

_CLAMP = {"pd": (0.0, None), "r1": (0.0, None), "r2s": (0.0, None),
          "mt": (0.0, 100.0)}


def _smooth_within_mask(field: np.ndarray, mask: np.ndarray,
                        sigma_vox: np.ndarray) -> np.ndarray:
    """Gaussian smoothing restricted to a mask (normalized convolution)."""
    m = mask.astype(np.float64)
    num = ndimage.gaussian_filter(field * m, sigma=sigma_vox)
    den = ndimage.gaussian_filter(m, sigma=sigma_vox)
    out = field.copy()
    inside = mask & (den > 1e-12)
    out[inside] = num[inside] / den[inside]
    return out


def sample_qmri(labels: LabelVolume, priors: TissuePriorSet, seed: int) -> QmriVolume:
    """Draw a QmriVolume from per-label mixture priors, deterministically.

    Every label present in ``labels`` must have a prior. Component choice
    and Gaussian draws are vectorized over the grid; values are clamped to
    the physical bounds after optional within-label smoothing.
    """
    present = labels.labels_present()
    missing = [lab for lab in present if lab not in priors]
    if missing:
        raise ValueError(f"labels without a prior: {missing}")
    for lab in present:
        total = priors[lab].weights().sum()
        if total <= 0:
            raise ValueError(f"label {lab}: component weights sum to {total}")

    grid = labels.grid
    lab_arr = grid.data.astype(np.int64)

    rng = make_rng(seed, "qmri")
    u = rng.random(size=grid.dims)
    z = rng.standard_normal(size=grid.dims + (4,))

    field = np.zeros(grid.dims + (4,), dtype=np.float64)
    for lab in present:
        prior = priors[lab]
        mask = lab_arr == lab
        cum = np.cumsum(prior.weights())
        cum /= cum[-1]
        comp = np.searchsorted(cum, u[mask], side="right")
        comp = np.minimum(comp, len(cum) - 1)
        means = prior.means()[comp]
        stds = prior.stds()[comp]
        field[mask] = means + stds * z[mask]

    spacing = np.asarray(grid.spacing, dtype=np.float64)
    for lab in present:
        prior = priors[lab]
        if prior.smooth_fwhm_mm is None:
            continue
        sigma_vox = prior.smooth_fwhm_mm * _FWHM_TO_SIGMA / spacing
        mask = lab_arr == lab
        for ch in range(4):
            field[..., ch] = np.where(
                mask,
                _smooth_within_mask(field[..., ch], mask, sigma_vox),
                field[..., ch],
            )

    channels = {}
    for ch, name in enumerate(CHANNELS):
        lo, hi = _CLAMP[name]
        vals = np.clip(field[..., ch], lo, hi)
        channels[name] = grid.with_data(vals.astype(np.float32))
    return QmriVolume(**channels)


@dataclass(frozen=True)
class LesionStampConfig:
    """Controls lesion-mask generation and which labels lesions may replace."""

    count_range: tuple[int, int] = (1, 3)
    size_scale_mm: tuple[float, float] = (4.0, 12.0)
    irregularity: float = 0.5
    replace_labels: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        lo, hi = (int(v) for v in self.count_range)
        if lo < 0 or hi < lo:
            raise ValueError(f"count_range must be a nonempty integer "
                             f"interval, got {self.count_range}")
        slo, shi = (float(v) for v in self.size_scale_mm)
        if slo <= 0 or shi < slo:
            raise ValueError(f"size_scale_mm must be a positive interval, "
                             f"got {self.size_scale_mm}")
        if not 0.0 <= float(self.irregularity) <= 1.0:
            raise ValueError(f"irregularity must be in [0,1], "
                             f"got {self.irregularity}")
        object.__setattr__(self, "count_range", (lo, hi))
        object.__setattr__(self, "size_scale_mm", (slo, shi))
        object.__setattr__(self, "irregularity", float(self.irregularity))
        object.__setattr__(self, "replace_labels",
                           tuple(int(v) for v in self.replace_labels))


def stamp_lesion(labels: LabelVolume, lesion_mask: VoxelGrid, lesion_label: int,
                 replace=None, lesion_name: str = "lesion") -> LabelVolume:
    """Overlay a binary lesion mask onto a label map.

    Voxels where the mask is set and the current label is in ``replace``
    become ``lesion_label``; everything else is untouched. ``replace=None``
    allows any foreground label to be replaced.
    """
    if not labels.grid.same_geometry(lesion_mask):
        raise ValueError(f"lesion mask is not co-registered with the label "
                         f"map (dims {lesion_mask.dims} vs {labels.grid.dims})")
    mvals = lesion_mask.data
    if not np.all((mvals == 0) | (mvals == 1)):
        raise ValueError("lesion mask must be binary (0/1)")

    lab = labels.grid.data.copy()
    hit = mvals == 1
    if replace is None:
        hit &= lab != 0
    else:
        hit &= np.isin(lab, np.asarray(list(replace), dtype=lab.dtype))
    lab[hit] = lesion_label

    names = dict(labels.label_names)
    names.setdefault(int(lesion_label), lesion_name)
    return LabelVolume(grid=labels.grid.with_data(lab), label_names=names)


def _place_centers(rng, dims, radii_vox, tries=200):
    """Rejection-sample blob centers that keep blobs inside the grid and
    roughly non-overlapping; falls back to the best-so-far on failure."""
    centers = []
    for radii in radii_vox:
        margin = radii + 1.0
        lo = margin
        hi = np.maximum(np.asarray(dims, dtype=np.float64) - margin, lo + 1e-6)
        best = None
        for _ in range(tries):
            c = lo + rng.random(3) * (hi - lo)
            ok = True
            for prev_c, prev_r in centers:
                sep = np.linalg.norm(c - prev_c)
                if sep < np.max(radii) + np.max(prev_r) + 2.0:
                    ok = False
                    break
            if ok:
                best = c
                break
            if best is None:
                best = c
        centers.append((best, radii))
    return [c for c, _ in centers]


def generate_lesion_mask(dims, spacing, config: LesionStampConfig,
                         seed: int) -> VoxelGrid:
    """Deterministic binary lesion mask with the configured blob count/size.

    Each blob is an ellipsoid envelope plus ``irregularity``-scaled smoothed
    noise, thresholded at the quantile that hits the ellipsoid's voxel
    volume, then reduced to its largest connected component.
    """
    dims = tuple(int(v) for v in dims)
    spacing = np.asarray([float(v) for v in spacing])
    rng = make_rng(seed, "lesion")

    lo, hi = config.count_range
    count = int(rng.integers(lo, hi + 1))
    mask = np.zeros(dims, dtype=bool)
    if count == 0:
        return VoxelGrid.from_array(mask.astype(np.float32), spacing=tuple(spacing))

    slo, shi = config.size_scale_mm
    diam_mm = slo + rng.random(count) * (shi - slo)
    aniso = 0.75 + rng.random((count, 3)) * 0.5
    radii_mm = 0.5 * diam_mm[:, None] * aniso
    radii_vox = radii_mm / spacing[None, :]
    # cap radii so a blob plus margin always fits in the grid
    cap = (np.asarray(dims, dtype=np.float64) - 3.0) / 2.0
    radii_vox = np.minimum(radii_vox, np.maximum(cap, 0.5)[None, :])

    centers = _place_centers(rng, dims, radii_vox)

    for c, radii in zip(centers, radii_vox):
        box_lo = np.maximum(np.floor(c - 2.0 * radii).astype(int), 0)
        box_hi = np.minimum(np.ceil(c + 2.0 * radii).astype(int) + 1, dims)
        axes = [np.arange(box_lo[a], box_hi[a], dtype=np.float64)
                for a in range(3)]
        ii, jj, kk = np.meshgrid(*axes, indexing="ij")
        quad = 1.0 - (((ii - c[0]) / radii[0]) ** 2
                      + ((jj - c[1]) / radii[1]) ** 2
                      + ((kk - c[2]) / radii[2]) ** 2)

        noise = rng.standard_normal(quad.shape)
        noise = ndimage.gaussian_filter(noise, sigma=np.maximum(radii / 2.0, 1.0))
        sd = noise.std()
        if sd > 0:
            noise /= sd
        fld = quad + config.irregularity * noise

        target = (4.0 / 3.0) * np.pi * np.prod(radii)
        target = int(np.clip(round(target), 1, fld.size - 1))
        thresh = np.partition(fld.ravel(), fld.size - target)[fld.size - target]
        blob = fld >= thresh

        cc, n = ndimage.label(blob)
        if n > 1:
            sizes = ndimage.sum_labels(np.ones_like(cc), cc, index=np.arange(1, n + 1))
            blob = cc == (1 + int(np.argmax(sizes)))

        view = mask[box_lo[0]:box_hi[0], box_lo[1]:box_hi[1], box_lo[2]:box_hi[2]]
        view |= blob

    return VoxelGrid.from_array(mask.astype(np.float32), spacing=tuple(spacing))
