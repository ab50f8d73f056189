"""Segmentation metrics, bootstrap summaries, and intensity normalization.

Dice and HD95 operate on co-registered binary masks.  HD95 follows the
evaluation convention of zero-padding masks to a fixed 256-voxel extent:
zero padding can never change boundary-to-boundary distances, so the
padded extent only enters through the empty-mask convention (a missing
prediction scores the full padded extent in mm).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .seeds import make_rng
from .volume import VoxelGrid

HD95_PAD_TO = 256


def _as_binary(grid: VoxelGrid, name: str) -> np.ndarray:
    data = grid.data
    if not np.isin(data, (0.0, 1.0)).all():
        raise ValueError(f"{name} mask is not binary")
    return data > 0.5


@dataclass(frozen=True)
class SegMaskPair:
    """A predicted mask and its ground truth on the same grid."""

    prediction: VoxelGrid
    truth: VoxelGrid

    def __post_init__(self) -> None:
        if not self.prediction.same_geometry(self.truth):
            raise ValueError("prediction and truth are not co-registered")
        _as_binary(self.prediction, "prediction")
        _as_binary(self.truth, "truth")

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.prediction.spacing


def dice(pair: SegMaskPair) -> float:
    """Dice overlap 2|P∩T| / (|P|+|T|); both masks empty counts as 1.0."""
    p = _as_binary(pair.prediction, "prediction")
    t = _as_binary(pair.truth, "truth")
    total = int(p.sum()) + int(t.sum())
    if total == 0:
        return 1.0
    inter = int(np.logical_and(p, t).sum())
    return 2.0 * inter / total


def _boundary(mask: np.ndarray) -> np.ndarray:
    # 6-connectivity surface: mask voxels lost under one erosion step.
    # border_value=0 treats everything outside the array as background,
    # which is exactly what zero-padding to a larger extent would do.
    structure = ndimage.generate_binary_structure(3, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def hd95(pair: SegMaskPair, pad_to: int = HD95_PAD_TO,
         directed: str = "union") -> float:
    """95th-percentile boundary distance in mm.

    ``directed="union"`` pools both directed nearest-distance sets before
    taking the percentile; ``"max"`` takes the larger of the two directed
    95th percentiles.  Empty prediction with nonempty truth (or the
    reverse) scores the padded extent, ``pad_to * max(spacing)`` mm; both
    empty scores 0.0.
    """
    if directed not in ("union", "max"):
        raise ValueError(f"unknown directed mode {directed!r}")
    if pad_to < 1:
        raise ValueError("pad_to must be a positive voxel count")
    p = _as_binary(pair.prediction, "prediction")
    t = _as_binary(pair.truth, "truth")
    if not p.any() and not t.any():
        return 0.0
    if not p.any() or not t.any():
        return float(pad_to) * float(max(pair.spacing))
    bp = _boundary(p)
    bt = _boundary(t)
    spacing = np.asarray(pair.spacing, dtype=np.float64)
    # EDT of the complement gives, at every voxel, the distance in mm to
    # the nearest boundary voxel of the other mask.
    d_to_t = ndimage.distance_transform_edt(~bt, sampling=spacing)
    d_to_p = ndimage.distance_transform_edt(~bp, sampling=spacing)
    fwd = d_to_t[bp]
    bwd = d_to_p[bt]
    if directed == "union":
        return float(np.percentile(np.concatenate([fwd, bwd]), 95.0))
    return float(max(np.percentile(fwd, 95.0), np.percentile(bwd, 95.0)))


def bootstrap_median_ci(values, resamples: int = 10_000, level: float = 0.95,
                        seed: int = 0) -> tuple[float, float, float]:
    """Sample median with a nonparametric percentile bootstrap CI.

    Returns ``(median, lo, hi)``.  Deterministic in ``seed``.
    """
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise ValueError("bootstrap over an empty value list")
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level {level} outside (0, 1)")
    if resamples < 1:
        raise ValueError("resamples must be positive")
    if not np.isfinite(vals).all():
        raise ValueError("values contain non-finite entries")
    median = float(np.median(vals))
    rng = make_rng(seed, "bootstrap")
    n = vals.size
    medians = np.empty(resamples, dtype=np.float64)
    # Chunked so the index matrix stays small for large cohorts.
    chunk = max(1, min(resamples, 4_000_000 // max(n, 1)))
    done = 0
    while done < resamples:
        m = min(chunk, resamples - done)
        idx = rng.integers(0, n, size=(m, n))
        medians[done:done + m] = np.median(vals[idx], axis=1)
        done += m
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(medians, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return median, float(lo), float(hi)


def normalize(vol: VoxelGrid, method: str = "percentile_clip_zscore") -> VoxelGrid:
    """Clip to the [0.5, 99.5] percentile range, then z-score.

    Percentiles and the z-score statistics are computed over nonzero
    voxels only, so an untouched zero background does not skew them.
    """
    if method != "percentile_clip_zscore":
        raise ValueError(f"unknown normalization method {method!r}")
    data = vol.data.astype(np.float64)
    fg = data != 0.0
    if not fg.any():
        raise ValueError("volume has no nonzero voxels to normalize")
    lo, hi = np.percentile(data[fg], [0.5, 99.5])
    clipped = np.clip(data, lo, hi)
    mean = float(clipped[fg].mean())
    std = float(clipped[fg].std())
    if std == 0.0:
        raise ValueError("constant volume cannot be z-scored")
    return vol.with_data(((clipped - mean) / std).astype(np.float32))


@dataclass(frozen=True)
class MetricSummary:
    median: float
    ci_lo: float
    ci_hi: float

    def __post_init__(self) -> None:
        if not self.ci_lo <= self.median <= self.ci_hi:
            raise ValueError(
                f"median {self.median} outside CI "
                f"[{self.ci_lo}, {self.ci_hi}]")


@dataclass(frozen=True)
class MetricReport:
    """Per-case Dice/HD95 values with bootstrap cohort summaries."""

    case_ids: tuple[str, ...]
    dice: tuple[float, ...]
    hd95: tuple[float, ...]
    dice_summary: MetricSummary
    hd95_summary: MetricSummary
    level: float = 0.95

    def __post_init__(self) -> None:
        n = len(self.case_ids)
        if n == 0:
            raise ValueError("report needs at least one case")
        if len(self.dice) != n or len(self.hd95) != n:
            raise ValueError("per-case metric lengths do not match case ids")
        for d in self.dice:
            if not 0.0 <= d <= 1.0:
                raise ValueError(f"dice value {d} outside [0, 1]")
        for h in self.hd95:
            if h < 0.0:
                raise ValueError(f"hd95 value {h} is negative")

    @classmethod
    def from_cases(cls, case_ids, dice_values, hd95_values,
                   resamples: int = 10_000, level: float = 0.95,
                   seed: int = 0) -> "MetricReport":
        dice_values = tuple(float(v) for v in dice_values)
        hd95_values = tuple(float(v) for v in hd95_values)
        d_med, d_lo, d_hi = bootstrap_median_ci(
            dice_values, resamples, level, seed=seed)
        h_med, h_lo, h_hi = bootstrap_median_ci(
            hd95_values, resamples, level, seed=seed)
        return cls(
            case_ids=tuple(str(c) for c in case_ids),
            dice=dice_values,
            hd95=hd95_values,
            dice_summary=MetricSummary(d_med, d_lo, d_hi),
            hd95_summary=MetricSummary(h_med, h_lo, h_hi),
            level=level,
        )

    def to_dict(self) -> dict:
        return {
            "cases": [
                {"id": c, "dice": d, "hd95_mm": h}
                for c, d, h in zip(self.case_ids, self.dice, self.hd95)
            ],
            "level": self.level,
            "summary": {
                "dice": {
                    "median": self.dice_summary.median,
                    "ci": [self.dice_summary.ci_lo, self.dice_summary.ci_hi],
                },
                "hd95_mm": {
                    "median": self.hd95_summary.median,
                    "ci": [self.hd95_summary.ci_lo, self.hd95_summary.ci_hi],
                },
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        """Aligned table, median on the top line and the CI beneath it."""
        pct = int(round(self.level * 100))
        rows = [
            ("", "dice", "hd95 (mm)"),
            ("median",
             f"{self.dice_summary.median:.3f}",
             f"{self.hd95_summary.median:.2f}"),
            (f"{pct}% CI",
             f"[{self.dice_summary.ci_lo:.3f}, {self.dice_summary.ci_hi:.3f}]",
             f"[{self.hd95_summary.ci_lo:.2f}, {self.hd95_summary.ci_hi:.2f}]"),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = [f"cases: {len(self.case_ids)}"]
        for r in rows:
            lines.append("  ".join(r[i].rjust(widths[i]) for i in range(3)))
        return "\n".join(lines) + "\n"
