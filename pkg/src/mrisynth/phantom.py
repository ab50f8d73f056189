"""Nested-ellipsoid head phantoms: quick label maps for demos and tests.

Not anatomy, just enough structure to exercise the whole pipeline: a
grey-matter shell around a white-matter core, a thin partial-volume band
at their interface, and two CSF "ventricles" inside the core.  Label
values follow the bundled prior table (0 background, 1 GM, 2 WM,
3 GM/WM PV, 4 CSF).
"""

from __future__ import annotations

import numpy as np

from .seeds import make_rng
from .volume import LabelVolume, VoxelGrid

LABEL_NAMES = {0: "background", 1: "GM", 2: "WM", 3: "GM/WM PV", 4: "CSF"}


def _ellipsoid_q(coords_mm, center_mm, radii_mm) -> np.ndarray:
    """Quadratic form; q <= 1 inside the ellipsoid."""
    q = np.zeros(coords_mm[0].shape)
    for x, c, r in zip(coords_mm, center_mm, radii_mm):
        q += ((x - c) / r) ** 2
    return q


def make_phantom_labels(dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0),
                        seed: int = 0) -> LabelVolume:
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    if any(d < 8 for d in dims):
        raise ValueError(f"phantom needs at least 8 voxels per axis, "
                         f"got {dims}")
    rng = make_rng(seed, "phantom")

    extent = np.asarray(dims) * np.asarray(spacing)
    center = extent / 2 + rng.uniform(-0.03, 0.03, 3) * extent
    outer_r = extent * rng.uniform(0.38, 0.44, 3)
    wm_r = outer_r * rng.uniform(0.62, 0.72, 3)

    axes = [np.arange(n) * s for n, s in zip(dims, spacing)]
    coords = np.meshgrid(*axes, indexing="ij")

    q_outer = _ellipsoid_q(coords, center, outer_r)
    q_wm = _ellipsoid_q(coords, center, wm_r)

    labels = np.zeros(dims, dtype=np.float32)
    labels[q_outer <= 1.0] = 1.0
    labels[q_wm <= 1.0] = 2.0
    # one thin band just inside the WM surface mixes both tissues
    band = 1.0 - 0.35 * min(spacing) / float(np.min(wm_r))
    labels[(q_wm <= 1.0) & (q_wm > band ** 2)] = 3.0

    vent_r = np.maximum(outer_r * 0.12, np.asarray(spacing) * 1.5)
    gap = np.array([vent_r[0] * 1.6, 0.0, 0.0])
    for side in (-1.0, 1.0):
        q_v = _ellipsoid_q(coords, center + side * gap, vent_r)
        labels[q_v <= 1.0] = 4.0

    grid = VoxelGrid.from_array(labels, spacing=spacing)
    return LabelVolume(grid=grid, label_names=dict(LABEL_NAMES))
