"""Closed-form MRI sequence forward models and acquisition-parameter draws.

Four sequences ship with the engine. All are voxel-wise products of a
receive field, proton density, a longitudinal-recovery factor and a
transverse-decay factor, with R2* standing in for R2:

  FSE      S = B1 PD (1 - e^{-R1 TR}) e^{-R2* TE}
  GRE      S = B1 PD sin(a) (1 - E1) e^{-R2* TE} / (1 - cos(a) E1),
           E1 = e^{-R1 TR} (spoiled steady state)
  FLAIR    S = B1 PD |1 - 2 e^{-R1 TI} + e^{-R1 TR}| e^{-R2* TE}
           (magnitude inversion-recovery spin echo)
  MPRAGE   S = B1 PD sin(a) |1 - 2 e^{-R1 TI} + e^{-R1 (TD+TX+TI)}| e^{-R2* TE}
           (inversion-prepared gradient-echo approximation; TD+TX+TI acts
           as the effective recovery period)

The GRE/FLAIR/MPRAGE forms are standard textbook closed forms chosen here;
swap them via ``register_sequence`` if a different steady-state model is
wanted (an MT-weighted sequence would plug in the same way; the shipped
four do not consume the MT channel).

Field strength B0 is drawn and recorded but does not enter the equations;
``rescale_for_field_strength`` offers an optional power-law adjustment of
R1/R2* whose default exponents of zero leave the maps untouched, because
no particular B0 dependence is assumed.

Arithmetic runs in float64 and results are stored as float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from mrisynth.seeds import make_rng
from mrisynth.volume import QmriVolume, VoxelGrid

SEQUENCES = ("FSE", "GRE", "FLAIR", "MPRAGE")

# parameters each sequence draws, in the fixed draw order
_PARAMS_BY_SEQUENCE = {
    "FSE": ("tr", "te", "b0"),
    "GRE": ("tr", "te", "alpha", "b0"),
    "FLAIR": ("tr", "te", "ti", "b0"),
    "MPRAGE": ("tr", "te", "ti", "tx", "td", "alpha", "b0"),
}
_DRAW_ORDER = ("tr", "te", "ti", "tx", "td", "alpha", "b0")

B0_BOUNDS = (0.3, 7.0)
_MAX_REDRAWS = 1000


@dataclass(frozen=True)
class AcquisitionParams:
    """One realized acquisition: times in seconds, alpha in degrees, b0 in
    Tesla. Fields that a sequence does not use must stay None."""

    sequence: str
    tr: float
    te: float
    b0: float
    ti: float | None = None
    tx: float | None = None
    td: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.sequence not in _PARAMS_BY_SEQUENCE:
            raise ValueError(f"unknown sequence {self.sequence!r}, "
                             f"expected one of {SEQUENCES}")
        used = _PARAMS_BY_SEQUENCE[self.sequence]
        for name in _DRAW_ORDER:
            val = getattr(self, name)
            if name in used:
                if val is None:
                    raise ValueError(f"{self.sequence} requires {name}")
                object.__setattr__(self, name, float(val))
            elif val is not None:
                raise ValueError(f"{self.sequence} does not use {name}")
        # te = 0 is allowed as the no-decay limiting case
        if self.tr <= 0 or self.te < 0:
            raise ValueError(f"tr must be positive and te nonnegative, "
                             f"got tr={self.tr} te={self.te}")
        if self.te >= self.tr:
            raise ValueError(f"te must be below tr, got te={self.te} tr={self.tr}")
        if self.ti is not None:
            if self.ti <= 0:
                raise ValueError(f"ti must be positive, got {self.ti}")
            if self.ti >= self.tr:
                raise ValueError(f"ti must be below tr, got ti={self.ti} "
                                 f"tr={self.tr}")
        for name in ("tx", "td"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive, got {val}")
        if self.alpha is not None and not 0.0 < self.alpha <= 90.0:
            raise ValueError(f"alpha must be in (0, 90] degrees, "
                             f"got {self.alpha}")
        if not B0_BOUNDS[0] <= self.b0 <= B0_BOUNDS[1]:
            raise ValueError(f"b0 must be in [{B0_BOUNDS[0]}, {B0_BOUNDS[1]}] T, "
                             f"got {self.b0}")

    def to_dict(self) -> dict:
        out = {"sequence": self.sequence}
        for name in _DRAW_ORDER:
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "AcquisitionParams":
        return cls(**doc)


@dataclass(frozen=True)
class ReceiveField:
    """Dimensionless multiplicative receive sensitivity, strictly positive."""

    b1: VoxelGrid

    def __post_init__(self):
        if self.b1.data.min() <= 0:
            raise ValueError("receive field must be strictly positive")

    @classmethod
    def uniform_like(cls, grid: VoxelGrid) -> "ReceiveField":
        return cls(b1=grid.with_data(np.ones(grid.dims, dtype=np.float32)))


def _prep(q: QmriVolume, p: AcquisitionParams, b1: ReceiveField, sequence: str):
    if p.sequence != sequence:
        raise ValueError(f"params are for {p.sequence}, not {sequence}")
    if not q.pd.same_geometry(b1.b1):
        raise ValueError(f"receive field is not co-registered with the maps "
                         f"(dims {b1.b1.dims} vs {q.pd.dims})")
    return (b1.b1.data.astype(np.float64), q.pd.data.astype(np.float64),
            q.r1.data.astype(np.float64), q.r2s.data.astype(np.float64))


def _sin_cos_deg(alpha: float) -> tuple[float, float]:
    # exact values at 90 degrees so the GRE form degenerates to FSE bitwise
    if alpha == 90.0:
        return 1.0, 0.0
    rad = math.radians(alpha)
    return math.sin(rad), math.cos(rad)


def _finish(q: QmriVolume, signal: np.ndarray) -> VoxelGrid:
    return q.pd.with_data(signal.astype(np.float32))


def simulate_fse(q: QmriVolume, p: AcquisitionParams, b1: ReceiveField) -> VoxelGrid:
    """Fast spin echo."""
    b1a, pd, r1, r2s = _prep(q, p, b1, "FSE")
    signal = b1a * pd * (1.0 - np.exp(-r1 * p.tr)) * np.exp(-r2s * p.te)
    return _finish(q, signal)


def simulate_gre(q: QmriVolume, p: AcquisitionParams, b1: ReceiveField) -> VoxelGrid:
    """Spoiled gradient echo at steady state."""
    b1a, pd, r1, r2s = _prep(q, p, b1, "GRE")
    sin_a, cos_a = _sin_cos_deg(p.alpha)
    e1 = np.exp(-r1 * p.tr)
    signal = b1a * pd * (1.0 - e1) * np.exp(-r2s * p.te) * sin_a / (1.0 - cos_a * e1)
    return _finish(q, signal)


def simulate_flair(q: QmriVolume, p: AcquisitionParams, b1: ReceiveField) -> VoxelGrid:
    """Magnitude inversion-recovery spin echo (fluid-nulling regime)."""
    b1a, pd, r1, r2s = _prep(q, p, b1, "FLAIR")
    ir = np.abs(1.0 - 2.0 * np.exp(-r1 * p.ti) + np.exp(-r1 * p.tr))
    signal = b1a * pd * ir * np.exp(-r2s * p.te)
    return _finish(q, signal)


def simulate_mprage(q: QmriVolume, p: AcquisitionParams, b1: ReceiveField) -> VoxelGrid:
    """Inversion-prepared gradient echo, closed-form approximation."""
    b1a, pd, r1, r2s = _prep(q, p, b1, "MPRAGE")
    sin_a, _ = _sin_cos_deg(p.alpha)
    tau = p.td + p.tx + p.ti
    ir = np.abs(1.0 - 2.0 * np.exp(-r1 * p.ti) + np.exp(-r1 * tau))
    signal = b1a * pd * sin_a * ir * np.exp(-r2s * p.te)
    return _finish(q, signal)


_SIMULATORS = {
    "FSE": simulate_fse,
    "GRE": simulate_gre,
    "FLAIR": simulate_flair,
    "MPRAGE": simulate_mprage,
}


def register_sequence(name: str, simulator, params=("tr", "te", "b0")) -> None:
    """Install a custom forward model under a new sequence name.

    ``simulator`` is called as simulator(q, params, b1) and must return a
    VoxelGrid; ``params`` lists the acquisition parameters it draws.
    """
    name = str(name)
    if name in _SIMULATORS:
        raise ValueError(f"sequence {name!r} already registered")
    bad = [p for p in params if p not in _DRAW_ORDER]
    if bad:
        raise ValueError(f"unknown parameters {bad}, valid: {_DRAW_ORDER}")
    _PARAMS_BY_SEQUENCE[name] = tuple(params)
    _SIMULATORS[name] = simulator


def simulate(q: QmriVolume, p: AcquisitionParams, b1: ReceiveField) -> VoxelGrid:
    """Dispatch to the forward model registered for ``p.sequence``."""
    return _SIMULATORS[p.sequence](q, p, b1)


@dataclass(frozen=True)
class ParamRanges:
    """Per-sequence closed intervals for uniform parameter draws."""

    by_sequence: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for seq, ranges in self.by_sequence.items():
            if seq not in _PARAMS_BY_SEQUENCE:
                raise ValueError(f"unknown sequence {seq!r}")
            needed = set(_PARAMS_BY_SEQUENCE[seq])
            got = set(ranges)
            if got != needed:
                raise ValueError(f"{seq}: ranges must cover exactly "
                                 f"{sorted(needed)}, got {sorted(got)}")
            out = {}
            for name, (lo, hi) in ranges.items():
                lo, hi = float(lo), float(hi)
                if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                    raise ValueError(f"{seq}.{name}: bad interval [{lo}, {hi}]")
                if name in ("tr", "te", "ti", "tx", "td") and lo <= 0:
                    raise ValueError(f"{seq}.{name}: times must be positive")
                if name == "alpha" and not (0.0 < lo and hi <= 90.0):
                    raise ValueError(f"{seq}.alpha: must lie in (0, 90]")
                if name == "b0" and not (B0_BOUNDS[0] <= lo and hi <= B0_BOUNDS[1]):
                    raise ValueError(f"{seq}.b0: must lie in {B0_BOUNDS}")
                out[name] = (lo, hi)
            clean[seq] = out
        object.__setattr__(self, "by_sequence", clean)

    def __getitem__(self, sequence: str) -> dict[str, tuple[float, float]]:
        return self.by_sequence[sequence]

    def to_dict(self) -> dict:
        return {seq: {k: [lo, hi] for k, (lo, hi) in ranges.items()}
                for seq, ranges in self.by_sequence.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ParamRanges":
        return cls(by_sequence={
            seq: {k: (v[0], v[1]) for k, v in ranges.items()}
            for seq, ranges in doc.items()
        })


# MPRAGE tr/ti/te/alpha/b0 are the published simulation ranges; everything
# else (and tx/td) are plausible clinical defaults, not fitted values.
DEFAULT_RANGES = ParamRanges(by_sequence={
    "FSE": {"tr": (2.0, 6.0), "te": (0.08, 0.12), "b0": (0.3, 7.0)},
    "GRE": {"tr": (0.02, 0.06), "te": (0.002, 0.01), "alpha": (5.0, 30.0),
            "b0": (0.3, 7.0)},
    "FLAIR": {"tr": (6.0, 10.0), "te": (0.08, 0.14), "ti": (2.0, 2.9),
              "b0": (0.3, 7.0)},
    "MPRAGE": {"tr": (1.9, 2.5), "ti": (0.6, 1.2), "te": (0.002, 0.004),
               "alpha": (5.0, 12.0), "tx": (0.5, 1.0), "td": (0.01, 0.3),
               "b0": (0.3, 7.0)},
})


def sample_params(ranges: ParamRanges, sequence: str, seed: int) -> AcquisitionParams:
    """Draw one parameter set uniformly from the sequence's intervals.

    Draws are retried as a block (bounded) until the joint constraints
    te < tr and ti < tr hold, so marginals stay near-uniform.
    """
    if sequence not in ranges.by_sequence:
        raise ValueError(f"no ranges configured for sequence {sequence!r}")
    intervals = ranges[sequence]
    rng = make_rng(seed, "params", sequence)

    for _ in range(_MAX_REDRAWS):
        draw = {}
        for name in _DRAW_ORDER:
            if name in intervals:
                lo, hi = intervals[name]
                draw[name] = lo + (hi - lo) * rng.random()
        if draw["te"] >= draw["tr"]:
            continue
        if "ti" in draw and draw["ti"] >= draw["tr"]:
            continue
        return AcquisitionParams(sequence=sequence, **draw)
    raise ValueError(f"{sequence}: no feasible parameter draw after "
                     f"{_MAX_REDRAWS} attempts (check te/ti vs tr ranges)")


def rescale_for_field_strength(q: QmriVolume, b0: float, r1_exponent: float = 0.0,
                               r2s_exponent: float = 0.0,
                               ref_b0: float = 3.0) -> QmriVolume:
    """Power-law adjustment of R1/R2* with field strength, identity by default."""
    if r1_exponent == 0.0 and r2s_exponent == 0.0:
        return q
    fac1 = (b0 / ref_b0) ** r1_exponent
    fac2 = (b0 / ref_b0) ** r2s_exponent
    return replace(
        q,
        r1=q.r1.with_data((q.r1.data.astype(np.float64) * fac1).astype(np.float32)),
        r2s=q.r2s.with_data((q.r2s.data.astype(np.float64) * fac2).astype(np.float32)),
    )


def generate_receive_field(dims, spacing, amplitude: float, smoothness_fwhm: float,
                           seed: int) -> ReceiveField:
    """Log-Gaussian smooth receive field: exp of smoothed white noise whose
    log has mean 0 and standard deviation ``amplitude`` over the volume.

    The noise is generated and smoothed on a coarse lattice (a few voxels
    per correlation length) and trilinearly upsampled, which keeps large
    smoothness values cheap at any resolution.
    """
    if not 0.0 <= amplitude < 1.0:
        raise ValueError(f"amplitude must be in [0, 1), got {amplitude}")
    if smoothness_fwhm <= 0:
        raise ValueError(f"smoothness_fwhm must be positive, got {smoothness_fwhm}")

    dims = tuple(int(v) for v in dims)
    spacing = np.asarray([float(v) for v in spacing])
    grid = VoxelGrid.from_array(np.ones(dims, dtype=np.float32),
                                spacing=tuple(spacing))
    if amplitude == 0.0:
        return ReceiveField(b1=grid)

    coarse_spacing = np.maximum(spacing, smoothness_fwhm / 5.0)
    extent = np.asarray(dims) * spacing
    coarse_dims = np.maximum(np.ceil(extent / coarse_spacing).astype(int) + 1, 2)

    rng = make_rng(seed, "receive")
    sigma_c = (smoothness_fwhm / np.sqrt(8.0 * np.log(2.0))) / coarse_spacing
    noise = ndimage.gaussian_filter(rng.standard_normal(tuple(coarse_dims)),
                                    sigma=sigma_c)

    step = coarse_spacing / spacing
    axes = [np.arange(n, dtype=np.float64) / step[a]
            for a, n in enumerate(dims)]
    coords = np.meshgrid(*axes, indexing="ij")
    log_field = ndimage.map_coordinates(noise, coords, order=1, mode="nearest")

    log_field -= log_field.mean()
    sd = log_field.std()
    if sd > 0:
        log_field *= amplitude / sd
    return ReceiveField(b1=grid.with_data(np.exp(log_field).astype(np.float32)))
