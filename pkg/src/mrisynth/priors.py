"""Per-label Gaussian-mixture intensity priors over (PD, R1, R2*, MT).

A prior set maps each integer tissue label to a list of mixture components.
Each component holds a weight, a 4-vector of channel means and a 4-vector
of channel standard deviations, in the fixed channel order
``("pd", "r1", "r2s", "mt")``. Means must respect the physical bounds
(PD, R1, R2* nonnegative; MT in [0, 100] percent).

Priors are stored as JSON: a top-level object mapping label (as a string
key) to ``{"components": [{"weight": w, "mean": [...], "std": [...]}],
"smooth_fwhm_mm": optional, "name": optional}``.

The packaged ``data/default_priors.json`` contains literature-plausible
placeholder values for a six-label head model. They are defaults for
demos and tests, not fitted population values; replace them for any
serious use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

CHANNELS = ("pd", "r1", "r2s", "mt")

# channel -> (lower, upper) physical bounds, upper None = unbounded
CHANNEL_BOUNDS = {
    "pd": (0.0, None),
    "r1": (0.0, None),
    "r2s": (0.0, None),
    "mt": (0.0, 100.0),
}

_WEIGHT_TOL = 1e-9


class PriorError(ValueError):
    """Invalid prior definition; the message names the offending field."""


def _check_channel_vector(vec, where: str, kind: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (4,):
        raise PriorError(f"{where}.{kind}: expected 4 values "
                         f"({', '.join(CHANNELS)}), got {vec!r}")
    if not np.all(np.isfinite(arr)):
        raise PriorError(f"{where}.{kind}: non-finite value")
    for i, ch in enumerate(CHANNELS):
        lo, hi = CHANNEL_BOUNDS[ch]
        if kind == "std":
            if arr[i] < 0:
                raise PriorError(f"{where}.std[{ch}]: must be nonnegative, "
                                 f"got {arr[i]}")
        else:
            if arr[i] < lo:
                raise PriorError(f"{where}.mean[{ch}]: {arr[i]} below "
                                 f"physical bound {lo}")
            if hi is not None and arr[i] > hi:
                raise PriorError(f"{where}.mean[{ch}]: {arr[i]} outside "
                                 f"physical bound [{lo},{hi}]")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: np.ndarray
    std: np.ndarray

    def validate(self, where: str) -> None:
        if not np.isfinite(self.weight) or self.weight < 0:
            raise PriorError(f"{where}.weight: must be nonnegative, "
                             f"got {self.weight}")
        _check_channel_vector(self.mean, where, "mean")
        _check_channel_vector(self.std, where, "std")


@dataclass(frozen=True)
class LabelPrior:
    """Mixture prior for one label, optionally with within-label smoothing."""

    components: tuple[MixtureComponent, ...]
    smooth_fwhm_mm: float | None = None
    name: str | None = None

    def validate(self, label: int) -> None:
        where = f"label {label}"
        if not self.components:
            raise PriorError(f"{where}: no mixture components")
        for i, comp in enumerate(self.components):
            comp.validate(f"{where}: components[{i}]")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise PriorError(f"{where}: component weights sum to {total}, "
                             f"expected 1")
        if self.smooth_fwhm_mm is not None and self.smooth_fwhm_mm <= 0:
            raise PriorError(f"{where}.smooth_fwhm_mm: must be positive, "
                             f"got {self.smooth_fwhm_mm}")

    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components], dtype=np.float64)

    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    def stds(self) -> np.ndarray:
        return np.stack([c.std for c in self.components])


@dataclass(frozen=True)
class TissuePriorSet:
    by_label: dict[int, LabelPrior] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for label, prior in self.by_label.items():
            label = int(label)
            prior.validate(label)
            clean[label] = prior
        object.__setattr__(self, "by_label", clean)

    def __contains__(self, label: int) -> bool:
        return int(label) in self.by_label

    def __getitem__(self, label: int) -> LabelPrior:
        return self.by_label[int(label)]

    def labels(self) -> list[int]:
        return sorted(self.by_label)

    def label_names(self) -> dict[int, str]:
        return {lab: (p.name if p.name else f"label{lab}")
                for lab, p in self.by_label.items()}

    def to_dict(self) -> dict:
        out = {}
        for label in self.labels():
            prior = self.by_label[label]
            entry = {
                "components": [
                    {"weight": c.weight,
                     "mean": [float(v) for v in c.mean],
                     "std": [float(v) for v in c.std]}
                    for c in prior.components
                ]
            }
            if prior.smooth_fwhm_mm is not None:
                entry["smooth_fwhm_mm"] = prior.smooth_fwhm_mm
            if prior.name is not None:
                entry["name"] = prior.name
            out[str(label)] = entry
        return out


_LABEL_KEYS = {"components", "smooth_fwhm_mm", "name"}
_COMPONENT_KEYS = {"weight", "mean", "std"}


def priors_from_dict(doc: dict) -> TissuePriorSet:
    if not isinstance(doc, dict):
        raise PriorError(f"prior document must be an object, got {type(doc).__name__}")
    by_label = {}
    for key, entry in doc.items():
        try:
            label = int(key)
        except (TypeError, ValueError):
            raise PriorError(f"label key {key!r} is not an integer") from None
        if label < 0:
            raise PriorError(f"label {label}: labels must be nonnegative")
        if not isinstance(entry, dict):
            raise PriorError(f"label {label}: expected an object")
        extra = set(entry) - _LABEL_KEYS
        if extra:
            raise PriorError(f"label {label}: unknown keys {sorted(extra)}")
        if "components" not in entry:
            raise PriorError(f"label {label}: missing 'components'")
        comps = []
        for i, cdoc in enumerate(entry["components"]):
            where = f"label {label}: components[{i}]"
            if not isinstance(cdoc, dict):
                raise PriorError(f"{where}: expected an object")
            extra = set(cdoc) - _COMPONENT_KEYS
            if extra:
                raise PriorError(f"{where}: unknown keys {sorted(extra)}")
            for req in ("weight", "mean", "std"):
                if req not in cdoc:
                    raise PriorError(f"{where}: missing '{req}'")
            comps.append(MixtureComponent(
                weight=float(cdoc["weight"]),
                mean=_check_channel_vector(cdoc["mean"], where, "mean"),
                std=_check_channel_vector(cdoc["std"], where, "std"),
            ))
        by_label[label] = LabelPrior(
            components=tuple(comps),
            smooth_fwhm_mm=(float(entry["smooth_fwhm_mm"])
                            if entry.get("smooth_fwhm_mm") is not None
                            else None),
            name=(str(entry["name"]) if "name" in entry else None),
        )
    return TissuePriorSet(by_label=by_label)


def load_priors(path) -> TissuePriorSet:
    """Load and validate a prior set from a JSON file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise PriorError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise PriorError(f"{path}: not valid JSON ({exc})") from None
    return priors_from_dict(doc)


def save_priors(priors: TissuePriorSet, path) -> None:
    Path(path).write_text(json.dumps(priors.to_dict(), indent=2, sort_keys=True) + "\n")


def default_priors() -> TissuePriorSet:
    """Packaged placeholder priors for the six-label demo head model."""
    text = resources.files("mrisynth").joinpath("data/default_priors.json").read_text()
    return priors_from_dict(json.loads(text))
