"""Corruption and augmentation stack for simulated signal volumes.

Stages run in a fixed order so runs stay comparable: geometric transform
(affine, elastic, flips, crop, all fused into one resampling), then bias
field, Gibbs ringing, low-resolution reslicing, and Rician noise last.
Noise comes after resolution effects because that is the order in which a
scanner produces them. An additive-Gaussian stage exists but no plan
enables it by default.

Every stage is a pure function of (input, parameters, seed). ``apply_plan``
returns the realized per-stage parameters alongside the outputs so a run
manifest can record exactly what was done.

Geometric conventions: rotations/scales are about the volume center,
translations and elastic displacements are in mm, images interpolate
trilinearly and labels nearest, voxels pulled from outside the source
grid become 0 (background).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mrisynth.seeds import derive_seed, make_rng
from mrisynth.sequences import generate_receive_field
from mrisynth.volume import LabelVolume, VoxelGrid


# ---------------------------------------------------------------------------
# voxel-level corruptions

def add_rician(signal: VoxelGrid, sigma: float, seed: int) -> VoxelGrid:
    """Rician noise: S -> sqrt((S + n_r)^2 + n_i^2), n_r, n_i ~ N(0, sigma^2)."""
    sigma = float(sigma)
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if signal.data.min() < 0:
        raise ValueError("Rician noise expects a nonnegative magnitude signal")
    if sigma == 0.0:
        return signal
    rng = make_rng(seed, "rician")
    n_r = rng.standard_normal(signal.dims)
    n_i = rng.standard_normal(signal.dims)
    s = signal.data.astype(np.float64)
    noisy = np.sqrt((s + sigma * n_r) ** 2 + (sigma * n_i) ** 2)
    return signal.with_data(noisy.astype(np.float32))


def add_gaussian(signal: VoxelGrid, sigma: float, seed: int) -> VoxelGrid:
    """Plain additive Gaussian noise (off by default in plans)."""
    sigma = float(sigma)
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0.0:
        return signal
    rng = make_rng(seed, "gaussian")
    noisy = signal.data.astype(np.float64) + sigma * rng.standard_normal(signal.dims)
    return signal.with_data(noisy.astype(np.float32))


def _kept_slice(n: int, fraction: float) -> slice:
    # centered window in the fftshifted spectrum, always containing DC at n//2
    m = max(1, int(round(fraction * n)))
    start = n // 2 - m // 2
    return slice(start, start + m)


def gibbs_ringing(signal: VoxelGrid, kept_fraction, seed: int = 0) -> VoxelGrid:
    """Truncate k-space to a centered window per axis (hard cut).

    ``kept_fraction`` is a scalar or per-axis triple in (0, 1]. The
    transform is deterministic; ``seed`` is accepted for stage-interface
    uniformity and ignored.
    """
    frac = np.broadcast_to(np.asarray(kept_fraction, dtype=np.float64), (3,))
    if np.any(frac <= 0) or np.any(frac > 1):
        raise ValueError(f"kept_fraction must lie in (0, 1], got {kept_fraction}")

    spectrum = np.fft.fftshift(np.fft.fftn(signal.data.astype(np.float64)))
    mask = np.zeros(signal.dims, dtype=bool)
    window = tuple(_kept_slice(n, f) for n, f in zip(signal.dims, frac))
    mask[window] = True
    out = np.fft.ifftn(np.fft.ifftshift(np.where(mask, spectrum, 0.0))).real
    return signal.with_data(out.astype(np.float32))


def lowres_reslice(signal: VoxelGrid, simulated_spacing, seed: int) -> VoxelGrid:
    """Simulate a coarse acquisition: trilinear downsample to the simulated
    spacing at a seed-chosen sub-voxel slice offset, then upsample back to
    the native grid. Output dims equal input dims."""
    sim = np.asarray([float(v) for v in simulated_spacing])
    native = np.asarray(signal.spacing)
    if np.any(sim < native - 1e-9):
        raise ValueError(f"simulated spacing {tuple(sim)} is below native "
                         f"{signal.spacing}")

    factors = sim / native
    rng = make_rng(seed, "lowres")
    # sub-voxel placement of the coarse slice grid; zero when factor is 1
    phase = rng.random(3) * (factors - 1.0)

    down_dims = np.maximum(np.round(np.asarray(signal.dims) / factors), 1).astype(int)
    axes = [phase[a] + factors[a] * np.arange(down_dims[a]) for a in range(3)]
    coords = np.meshgrid(*axes, indexing="ij")
    down = ndimage.map_coordinates(signal.data.astype(np.float64), coords,
                                   order=1, mode="nearest")

    axes = [(np.arange(signal.dims[a]) - phase[a]) / factors[a] for a in range(3)]
    coords = np.meshgrid(*axes, indexing="ij")
    up = ndimage.map_coordinates(down, coords, order=1, mode="nearest")
    return signal.with_data(up.astype(np.float32))


def bias_field_augment(signal: VoxelGrid, amplitude: float, fwhm: float,
                       seed: int) -> VoxelGrid:
    """Multiply by a fresh log-Gaussian bias field (see the receive-field
    generator; same construction, different seed stream)."""
    if amplitude == 0.0:
        return signal
    rf = generate_receive_field(signal.dims, signal.spacing, amplitude, fwhm,
                                derive_seed(seed, "bias"))
    out = signal.data.astype(np.float64) * rf.b1.data.astype(np.float64)
    return signal.with_data(out.astype(np.float32))


# ---------------------------------------------------------------------------
# plan configuration

@dataclass(frozen=True)
class AffineConfig:
    rotation_deg: float = 10.0       # per-axis draw from U(-r, r)
    scale: tuple[float, float] = (0.9, 1.1)
    translation_mm: float = 5.0      # per-axis draw from U(-t, t)

    def __post_init__(self):
        if self.rotation_deg < 0 or self.translation_mm < 0:
            raise ValueError("rotation_deg and translation_mm must be >= 0")
        lo, hi = self.scale
        if not 0 < lo <= hi:
            raise ValueError(f"scale interval must be positive, got {self.scale}")


@dataclass(frozen=True)
class ElasticConfig:
    control_spacing_mm: float = 32.0
    displacement_std_mm: float = 3.0

    def __post_init__(self):
        if self.control_spacing_mm <= 0 or self.displacement_std_mm < 0:
            raise ValueError("elastic config must have positive control "
                             "spacing and nonnegative displacement std")


@dataclass(frozen=True)
class BiasConfig:
    amplitude: float = 0.3
    fwhm_mm: float = 96.0

    def __post_init__(self):
        if not 0 <= self.amplitude < 1:
            raise ValueError(f"amplitude must be in [0, 1), got {self.amplitude}")
        if self.fwhm_mm <= 0:
            raise ValueError(f"fwhm_mm must be positive, got {self.fwhm_mm}")


@dataclass(frozen=True)
class GibbsConfig:
    kept_fraction: tuple[float, float] = (0.6, 1.0)

    def __post_init__(self):
        lo, hi = self.kept_fraction
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"kept_fraction interval must sit in (0, 1], "
                             f"got {self.kept_fraction}")


@dataclass(frozen=True)
class LowresConfig:
    spacing_mm: tuple[float, float] = (2.0, 5.0)

    def __post_init__(self):
        lo, hi = self.spacing_mm
        if not 0 < lo <= hi:
            raise ValueError(f"spacing_mm interval must be positive, "
                             f"got {self.spacing_mm}")


@dataclass(frozen=True)
class RicianConfig:
    """sigma is a scalar or interval; relative sigma is a fraction of the
    99th-percentile intensity of the incoming signal."""

    sigma: tuple[float, float] = (0.01, 0.1)
    relative: bool = True

    def __post_init__(self):
        sig = self.sigma
        if np.isscalar(sig):
            sig = (float(sig), float(sig))
        lo, hi = (float(v) for v in sig)
        if lo < 0 or hi < lo:
            raise ValueError(f"sigma interval invalid: {self.sigma}")
        object.__setattr__(self, "sigma", (lo, hi))


@dataclass(frozen=True)
class GaussianConfig:
    sigma: tuple[float, float] = (0.01, 0.05)
    relative: bool = True

    def __post_init__(self):
        sig = self.sigma
        if np.isscalar(sig):
            sig = (float(sig), float(sig))
        lo, hi = (float(v) for v in sig)
        if lo < 0 or hi < lo:
            raise ValueError(f"sigma interval invalid: {self.sigma}")
        object.__setattr__(self, "sigma", (lo, hi))


@dataclass(frozen=True)
class CropConfig:
    dims: tuple[int, int, int] = (192, 192, 192)
    require_lesion: bool = False
    lesion_label: int = 5
    pad: bool = True   # zero-pad volumes smaller than the crop

    def __post_init__(self):
        d = tuple(int(v) for v in self.dims)
        if any(v <= 0 for v in d):
            raise ValueError(f"crop dims must be positive, got {self.dims}")
        object.__setattr__(self, "dims", d)


_STAGE_TYPES = {
    "affine": AffineConfig, "elastic": ElasticConfig, "bias": BiasConfig,
    "gibbs": GibbsConfig, "lowres": LowresConfig, "rician": RicianConfig,
    "gaussian": GaussianConfig, "crop": CropConfig,
}


@dataclass(frozen=True)
class AugmentPlan:
    """Which stages run, with their parameters. None disables a stage;
    flips are controlled by per-axis probabilities."""

    affine: AffineConfig | None = None
    elastic: ElasticConfig | None = None
    flip_prob: tuple[float, float, float] = (0.0, 0.0, 0.0)
    crop: CropConfig | None = None
    bias: BiasConfig | None = None
    gibbs: GibbsConfig | None = None
    lowres: LowresConfig | None = None
    rician: RicianConfig | None = None
    gaussian: GaussianConfig | None = None

    def __post_init__(self):
        p = self.flip_prob
        if np.isscalar(p):
            p = (p, p, p)
        p = tuple(float(v) for v in p)
        if len(p) != 3 or any(not 0 <= v <= 1 for v in p):
            raise ValueError(f"flip_prob must be 3 probabilities, "
                             f"got {self.flip_prob}")
        object.__setattr__(self, "flip_prob", p)

    @classmethod
    def default(cls) -> "AugmentPlan":
        return cls(affine=AffineConfig(), elastic=ElasticConfig(),
                   flip_prob=(0.5, 0.5, 0.5), crop=CropConfig(),
                   bias=BiasConfig(), gibbs=GibbsConfig(),
                   lowres=LowresConfig(), rician=RicianConfig())

    def to_dict(self) -> dict:
        out = {"flip_prob": list(self.flip_prob)}
        for name, typ in _STAGE_TYPES.items():
            cfg = getattr(self, name)
            if cfg is not None:
                doc = {}
                for fname in typ.__dataclass_fields__:
                    val = getattr(cfg, fname)
                    doc[fname] = list(val) if isinstance(val, tuple) else val
                out[name] = doc
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "AugmentPlan":
        kwargs = {}
        for key, val in doc.items():
            if key == "flip_prob":
                kwargs["flip_prob"] = tuple(val)
            elif key in _STAGE_TYPES:
                typ = _STAGE_TYPES[key]
                fields = {}
                for fname, fval in val.items():
                    if fname not in typ.__dataclass_fields__:
                        raise ValueError(f"plan.{key}: unknown field {fname!r}")
                    fields[fname] = tuple(fval) if isinstance(fval, list) else fval
                kwargs[key] = typ(**fields)
            else:
                raise ValueError(f"plan: unknown stage {key!r}")
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# the fused geometric transform

def _rotation_matrix(angles_rad) -> np.ndarray:
    ax, ay, az = angles_rad
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _elastic_displacement(dims, spacing, cfg: ElasticConfig, rng) -> np.ndarray:
    """Dense (3, *dims) voxel-space displacement field from a coarse
    control grid of N(0, std_mm) vectors."""
    spacing = np.asarray(spacing)
    extent = np.asarray(dims) * spacing
    coarse = np.maximum(np.ceil(extent / cfg.control_spacing_mm).astype(int) + 1, 2)
    control = rng.standard_normal((3, *coarse)) * cfg.displacement_std_mm

    step = cfg.control_spacing_mm / spacing
    axes = [np.arange(n, dtype=np.float64) / step[a] for a, n in enumerate(dims)]
    coords = np.meshgrid(*axes, indexing="ij")
    out = np.empty((3, *dims), dtype=np.float64)
    for a in range(3):
        out[a] = ndimage.map_coordinates(control[a], coords, order=1,
                                         mode="nearest") / spacing[a]
    return out


def _pad_to(data: np.ndarray, target, value=0.0):
    """Symmetric zero-padding up to target dims; returns (padded, offsets)."""
    pads, offs = [], []
    for n, want in zip(data.shape, target):
        extra = max(0, want - n)
        lo = extra // 2
        pads.append((lo, extra - lo))
        offs.append(lo)
    if any(p != (0, 0) for p in pads):
        data = np.pad(data, pads, constant_values=value)
    return data, offs


def spatial_augment(vols, plan: AugmentPlan, seed: int, labels: LabelVolume = None):
    """Apply one sampled geometric transform (affine, elastic, flips, crop)
    to every input identically.

    ``vols`` is a VoxelGrid or list of co-registered VoxelGrids. Returns
    ``(vols_out, labels_out, realized)`` where realized records the drawn
    transform parameters. Images are interpolated trilinearly, labels
    nearest; the crop window is uniform over valid positions, optionally
    forced to contain a lesion voxel.
    """
    single = isinstance(vols, VoxelGrid)
    vol_list = [vols] if single else list(vols)
    if not vol_list:
        raise ValueError("no volumes given")
    ref = vol_list[0]
    for v in vol_list[1:]:
        if not ref.same_geometry(v):
            raise ValueError("volumes are not co-registered")
    if labels is not None and not ref.same_geometry(labels.grid):
        raise ValueError("label volume is not co-registered with the images")

    rng = make_rng(seed, "spatial")
    dims = np.asarray(ref.dims)
    spacing = np.asarray(ref.spacing)
    realized: dict = {}

    # draw everything first, in a fixed order
    flips = [False, False, False]
    if any(p > 0 for p in plan.flip_prob):
        u = rng.random(3)
        flips = [bool(u[a] < plan.flip_prob[a]) for a in range(3)]
    realized["flips"] = flips

    rot = scale = shift = None
    if plan.affine is not None:
        cfg = plan.affine
        rot = np.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg, 3))
        scale = rng.uniform(cfg.scale[0], cfg.scale[1], 3)
        shift = rng.uniform(-cfg.translation_mm, cfg.translation_mm, 3)
        realized["affine"] = {"rotation_deg": np.degrees(rot).tolist(),
                              "scale": scale.tolist(),
                              "translation_mm": shift.tolist()}

    disp = None
    if plan.elastic is not None and plan.elastic.displacement_std_mm > 0:
        disp = _elastic_displacement(ref.dims, spacing, plan.elastic, rng)
        realized["elastic"] = {
            "control_spacing_mm": plan.elastic.control_spacing_mm,
            "displacement_std_mm": plan.elastic.displacement_std_mm,
            "rms_displacement_mm": float(np.sqrt(
                np.mean((disp * spacing[:, None, None, None]) ** 2))),
        }

    geometric = any(flips) or rot is not None or disp is not None

    # backward mapping evaluated on the full (uncropped) output grid
    if geometric:
        axes = [np.arange(n, dtype=np.float64) for n in ref.dims]
        oi, oj, ok = np.meshgrid(*axes, indexing="ij")
        coords = np.stack([oi, oj, ok])
        for a in range(3):
            if flips[a]:
                coords[a] = (dims[a] - 1) - coords[a]
        if disp is not None:
            coords = coords - disp
        if rot is not None:
            center = (dims - 1) / 2.0
            inv = np.diag(1.0 / scale) @ _rotation_matrix(rot).T
            mm = (coords - center[:, None, None, None]) \
                * spacing[:, None, None, None]
            mm = mm - shift[:, None, None, None]
            mm = np.einsum("ab,b...->a...", inv, mm)
            coords = mm / spacing[:, None, None, None] + center[:, None, None, None]

        def transform(grid_data, order):
            return ndimage.map_coordinates(grid_data, coords, order=order,
                                           mode="constant", cval=0.0)
    else:
        def transform(grid_data, order):
            return grid_data

    out_imgs = [transform(v.data, 1) for v in vol_list]
    out_lab = transform(labels.grid.data, 0) if labels is not None else None

    # crop last, identically for every channel
    if plan.crop is not None:
        want = np.asarray(plan.crop.dims)
        if not plan.crop.pad and np.any(want > dims):
            raise ValueError(f"crop {plan.crop.dims} exceeds volume dims "
                             f"{ref.dims} and padding is disabled")
        padded = []
        for img in out_imgs:
            p, offs = _pad_to(img, want)
            padded.append(p)
        out_imgs = padded
        if out_lab is not None:
            out_lab, _ = _pad_to(out_lab, want)
        pdims = np.asarray(out_imgs[0].shape)

        max_off = pdims - want
        offset = np.array([int(rng.integers(0, m + 1)) for m in max_off])
        if (plan.crop.require_lesion and out_lab is not None
                and (out_lab == plan.crop.lesion_label).any()):
            lesion_idx = np.argwhere(out_lab == plan.crop.lesion_label)
            for attempt in range(200):
                window = tuple(slice(offset[a], offset[a] + want[a])
                               for a in range(3))
                if (out_lab[window] == plan.crop.lesion_label).any():
                    break
                offset = np.array([int(rng.integers(0, m + 1)) for m in max_off])
            else:
                pick = lesion_idx[int(rng.integers(0, len(lesion_idx)))]
                offset = np.clip(pick - want // 2, 0, max_off)
        window = tuple(slice(offset[a], offset[a] + want[a]) for a in range(3))
        out_imgs = [img[window] for img in out_imgs]
        if out_lab is not None:
            out_lab = out_lab[window]
        realized["crop_offset"] = [int(v) for v in offset]

    out_dims = out_imgs[0].shape
    affine = ref.affine.copy()   # augmentation keeps the nominal geometry
    out_vols = [VoxelGrid(dims=out_dims, spacing=ref.spacing, affine=affine,
                          data=img.astype(np.float32)) for img in out_imgs]
    labels_out = None
    if labels is not None:
        lab_grid = VoxelGrid(dims=out_dims, spacing=ref.spacing, affine=affine,
                             data=out_lab.astype(np.float32))
        labels_out = LabelVolume(grid=lab_grid, label_names=labels.label_names)

    return (out_vols[0] if single else out_vols), labels_out, realized


# ---------------------------------------------------------------------------
# full chain

def _draw_interval(rng, interval) -> float:
    lo, hi = interval
    return float(lo + (hi - lo) * rng.random())


def apply_plan(image: VoxelGrid, labels: LabelVolume | None,
               plan: AugmentPlan, seed: int):
    """Run the full corruption chain on one image (and its labels).

    Returns ``(image_out, labels_out, realized)``; realized holds every
    sampled stage parameter for the run manifest.
    """
    image, labels, realized = spatial_augment(
        image, plan, derive_seed(seed, "stage", "spatial"), labels=labels)
    image, intensity = apply_intensity(image, plan, seed)
    realized.update(intensity)
    return image, labels, realized


def apply_intensity(image: VoxelGrid, plan: AugmentPlan, seed: int):
    """Intensity stages only (bias, gibbs, lowres, noise), no geometry.

    Lets a caller share one spatial transform across several contrasts of
    the same sample while corrupting each contrast independently.
    Returns ``(image_out, realized)``.
    """
    draw = make_rng(seed, "plan")
    realized = {}

    if plan.bias is not None and plan.bias.amplitude > 0:
        image = bias_field_augment(image, plan.bias.amplitude,
                                   plan.bias.fwhm_mm,
                                   derive_seed(seed, "stage", "bias"))
        realized["bias"] = {"amplitude": plan.bias.amplitude,
                            "fwhm_mm": plan.bias.fwhm_mm}

    if plan.gibbs is not None:
        frac = _draw_interval(draw, plan.gibbs.kept_fraction)
        image = gibbs_ringing(image, frac)
        # truncation undershoot can dip below zero; clip like a magnitude
        # reconstruction so the noise stage sees a valid signal
        image = image.with_data(np.maximum(image.data, 0.0))
        realized["gibbs"] = {"kept_fraction": frac}

    if plan.lowres is not None:
        axis = int(draw.integers(0, 3))
        spacing_mm = _draw_interval(draw, plan.lowres.spacing_mm)
        sim = list(image.spacing)
        sim[axis] = max(spacing_mm, sim[axis])
        image = lowres_reslice(image, sim,
                               derive_seed(seed, "stage", "lowres"))
        realized["lowres"] = {"axis": axis, "spacing_mm": sim[axis]}

    if plan.rician is not None:
        sigma = _draw_interval(draw, plan.rician.sigma)
        if plan.rician.relative:
            sigma *= float(np.percentile(image.data, 99))
        image = add_rician(image, sigma, derive_seed(seed, "stage", "rician"))
        realized["rician"] = {"sigma": sigma}

    if plan.gaussian is not None:
        sigma = _draw_interval(draw, plan.gaussian.sigma)
        if plan.gaussian.relative:
            sigma *= float(np.percentile(image.data, 99))
        image = add_gaussian(image, sigma,
                             derive_seed(seed, "stage", "gaussian"))
        realized["gaussian"] = {"sigma": sigma}

    return image, realized
