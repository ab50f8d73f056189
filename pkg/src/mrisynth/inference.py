"""Model-agnostic segmentation inference: sliding window, flip TTA,
logit ensembling.

A predictor is any object with ``num_classes`` and a ``predict(patch)``
method mapping a channel-first float32 array (C, X, Y, Z) to per-class
logits (num_classes, X, Y, Z) of the same spatial dims. Volumes are
handed to the harness as one or more co-registered VoxelGrids (the
channels); logits move through the harness as plain channel-first
arrays, and callers wrap the final mask back into a grid when writing.

Sliding-window prediction tiles the (zero-padded) volume with patches at
stride patch*(1-overlap), weights each patch with a separable Gaussian
and normalizes by the accumulated weight, so the blend weights form a
partition of unity. Accumulation is float64 in a fixed window order,
which makes results independent of any internal parallelism.

Test-time augmentation runs the 8 axis-flip combinations, un-flips each
logit volume and averages. Ensembling is the per-voxel arithmetic mean.
Argmax ties break toward the lowest class index.
"""

from __future__ import annotations

import itertools
import struct
import subprocess
from dataclasses import dataclass

import numpy as np

from mrisynth.volume import VoxelGrid

# On-wire tensor framing for external predictors: magic, version byte,
# dtype code byte (1 = float32), ndim byte, int64 little-endian dims,
# then the C-order payload.
_WIRE_MAGIC = b"MSTN"
_WIRE_VERSION = 1
_WIRE_FLOAT32 = 1


def write_tensor(stream, arr: np.ndarray) -> None:
    """Frame a float32 array for the external-predictor wire format."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    stream.write(_WIRE_MAGIC)
    stream.write(struct.pack("<BBB", _WIRE_VERSION, _WIRE_FLOAT32, arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    stream.write(arr.tobytes())


def read_tensor(stream) -> np.ndarray:
    """Parse one framed tensor; raises ValueError on malformed input."""
    head = stream.read(4)
    if head != _WIRE_MAGIC:
        raise ValueError(f"bad tensor magic {head!r}")
    version, dtype_code, ndim = struct.unpack("<BBB", stream.read(3))
    if version != _WIRE_VERSION:
        raise ValueError(f"unsupported tensor wire version {version}")
    if dtype_code != _WIRE_FLOAT32:
        raise ValueError(f"unsupported tensor dtype code {dtype_code}")
    dims = struct.unpack(f"<{ndim}q", stream.read(8 * ndim))
    count = int(np.prod(dims))
    buf = stream.read(count * 4)
    if len(buf) < count * 4:
        raise ValueError(f"tensor payload truncated: got {len(buf)} of "
                         f"{count * 4} bytes")
    return np.frombuffer(buf, dtype="<f4").reshape(dims)


class Predictor:
    """Voxel-classifier contract: patch in, same-dims logits out."""

    num_classes: int = 2

    def predict(self, patch: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ThresholdPredictor(Predictor):
    """Reference mock: class 1 logit grows with (intensity - threshold) of
    channel 0; class 0 logit is its negation. Voxel-wise, hence exactly
    flip-equivariant."""

    num_classes = 2

    def __init__(self, threshold: float, gain: float = 1.0):
        self.threshold = float(threshold)
        self.gain = float(gain)

    def predict(self, patch: np.ndarray) -> np.ndarray:
        fg = self.gain * (patch[0].astype(np.float32) - self.threshold)
        return np.stack([-fg, fg])


class SubprocessPredictor(Predictor):
    """Bridge to an external model: runs a command per patch, sending the
    patch on stdin and reading logits from stdout, both in the framed
    tensor format above. The command must be stateless per call."""

    def __init__(self, command, num_classes: int):
        self.command = list(command)
        self.num_classes = int(num_classes)

    def predict(self, patch: np.ndarray) -> np.ndarray:
        import io

        buf = io.BytesIO()
        write_tensor(buf, patch)
        proc = subprocess.run(self.command, input=buf.getvalue(),
                              stdout=subprocess.PIPE, check=True)
        return read_tensor(io.BytesIO(proc.stdout))


@dataclass(frozen=True)
class WindowSpec:
    patch: tuple[int, int, int] = (192, 192, 192)
    overlap: float = 0.5
    blend_std_frac: float = 0.125

    def __post_init__(self):
        p = self.patch
        if np.isscalar(p):
            p = (p, p, p)
        p = tuple(int(v) for v in p)
        if len(p) != 3 or any(v <= 0 for v in p):
            raise ValueError(f"patch must be 3 positive ints, got {self.patch}")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.blend_std_frac <= 0:
            raise ValueError(f"blend_std_frac must be positive, "
                             f"got {self.blend_std_frac}")
        object.__setattr__(self, "patch", p)


def _stack_channels(vol) -> np.ndarray:
    if isinstance(vol, VoxelGrid):
        vols = [vol]
    else:
        vols = list(vol)
        for v in vols[1:]:
            if not vols[0].same_geometry(v):
                raise ValueError("channels are not co-registered")
    return np.stack([v.data for v in vols])


def _window_starts(n: int, patch: int, stride: int) -> list[int]:
    if n <= patch:
        return [0]
    starts = list(range(0, n - patch + 1, stride))
    if starts[-1] != n - patch:
        starts.append(n - patch)
    return starts


def _blend_kernel(spec: WindowSpec) -> np.ndarray:
    parts = []
    for p in spec.patch:
        x = np.arange(p, dtype=np.float64)
        center = (p - 1) / 2.0
        sigma = spec.blend_std_frac * p
        parts.append(np.exp(-0.5 * ((x - center) / sigma) ** 2))
    return parts[0][:, None, None] * parts[1][None, :, None] * parts[2][None, None, :]


def _pad_spatial(data: np.ndarray, patch) -> tuple[np.ndarray, list[slice]]:
    pads = [(0, 0)]
    crop = []
    for n, p in zip(data.shape[1:], patch):
        extra = max(0, p - n)
        lo = extra // 2
        pads.append((lo, extra - lo))
        crop.append(slice(lo, lo + n))
    if any(pad != (0, 0) for pad in pads):
        data = np.pad(data, pads)
    return data, crop


def _check_logits(logits, num_classes, spatial) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.shape != (num_classes,) + tuple(spatial):
        raise ValueError(f"predictor returned shape {logits.shape}, expected "
                         f"{(num_classes,) + tuple(spatial)}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("predictor returned non-finite logits")
    return logits


def sliding_window_predict(vol, model: Predictor, spec: WindowSpec) -> np.ndarray:
    """Gaussian-blended sliding-window logits over a (multi-channel) volume.

    Returns float32 logits of shape (num_classes, X, Y, Z) on the input
    grid (padding added for small volumes is removed again).
    """
    data = _stack_channels(vol)
    data, crop = _pad_spatial(data, spec.patch)
    spatial = data.shape[1:]

    stride = [max(1, int(round(p * (1.0 - spec.overlap)))) for p in spec.patch]
    starts = [_window_starts(n, p, s)
              for n, p, s in zip(spatial, spec.patch, stride)]
    windows = list(itertools.product(*starts))

    if len(windows) == 1:
        patch = data[:, :spec.patch[0], :spec.patch[1], :spec.patch[2]]
        logits = _check_logits(model.predict(patch), model.num_classes,
                               spec.patch)
        out = logits.astype(np.float32)
    else:
        kernel = _blend_kernel(spec)
        acc = np.zeros((model.num_classes,) + spatial, dtype=np.float64)
        wsum = np.zeros(spatial, dtype=np.float64)
        for i0, j0, k0 in windows:
            sl = (slice(i0, i0 + spec.patch[0]),
                  slice(j0, j0 + spec.patch[1]),
                  slice(k0, k0 + spec.patch[2]))
            logits = _check_logits(model.predict(data[(slice(None),) + sl]),
                                   model.num_classes, spec.patch)
            acc[(slice(None),) + sl] += logits.astype(np.float64) * kernel
            wsum[sl] += kernel
        out = (acc / wsum).astype(np.float32)

    return out[(slice(None),) + tuple(crop)]


_FLIP_COMBOS = tuple(itertools.product((False, True), repeat=3))


def tta_predict(vol, model: Predictor, spec: WindowSpec) -> np.ndarray:
    """Average sliding-window logits over the 8 axis-flip combinations."""
    data = _stack_channels(vol)
    if isinstance(vol, VoxelGrid):
        grids = [vol]
    else:
        grids = list(vol)

    acc = None
    for combo in _FLIP_COMBOS:
        axes = [a + 1 for a, f in enumerate(combo) if f]
        flipped = np.flip(data, axis=axes) if axes else data
        channels = [grids[0].with_data(flipped[c])
                    for c in range(flipped.shape[0])]
        logits = sliding_window_predict(channels, model, spec)
        if axes:
            logits = np.flip(logits, axis=axes)
        acc = logits.astype(np.float64) if acc is None else acc + logits
    return (acc / len(_FLIP_COMBOS)).astype(np.float32)


def ensemble_logits(per_contrast) -> np.ndarray:
    """Per-voxel arithmetic mean of logit volumes (e.g., across contrasts)."""
    arrays = [np.asarray(a) for a in per_contrast]
    if not arrays:
        raise ValueError("no logit volumes to ensemble")
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"logit shapes differ: {a.shape} vs {shape}")
    acc = np.zeros(shape, dtype=np.float64)
    for a in arrays:
        acc += a
    return (acc / len(arrays)).astype(np.float32)


def logits_to_mask(logits: np.ndarray, lesion_class: int) -> np.ndarray:
    """Binary mask of voxels whose argmax class (ties to the lowest index)
    is ``lesion_class``."""
    logits = np.asarray(logits)
    if not 0 <= lesion_class < logits.shape[0]:
        raise ValueError(f"lesion_class {lesion_class} out of range for "
                         f"{logits.shape[0]} classes")
    winners = np.argmax(logits, axis=0)   # first (lowest) index wins ties
    return (winners == lesion_class).astype(np.uint8)
