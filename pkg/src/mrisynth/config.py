"""Run configuration: one JSON document, fully resolved up front.

A config names its inputs (label map or a directory of quantitative
maps), the tissue priors, per-sequence acquisition-parameter ranges, the
corruption plan, and the master seed.  ``RunConfig.from_dict`` resolves
every default and validates every field before any pipeline code runs,
and ``to_dict`` echoes the fully resolved document back so a manifest
carries a complete, self-contained description of the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .corruption import AugmentPlan
from .priors import (
    PriorError,
    TissuePriorSet,
    default_priors,
    load_priors,
    priors_from_dict,
)
from .qmaps import LesionStampConfig
from .sequences import DEFAULT_RANGES, SEQUENCES, ParamRanges


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending field."""


_CONFIG_KEYS = {
    "labels", "qmaps_dir", "out_dir", "seed", "count", "sequences",
    "priors", "ranges", "augment", "lesion", "lesion_label",
}

_LESION_KEYS = {"count_range", "size_scale_mm", "irregularity",
                "replace_labels"}


def _require(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"config.{field}: {message}")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run description.

    ``labels`` and ``qmaps_dir`` are kept as written (possibly relative)
    and resolved against ``base_dir``, so a config or manifest stays
    valid when the directory containing it moves as a unit.
    """

    labels: str | None
    qmaps_dir: str | None
    out_dir: str
    seed: int
    count: int
    sequences: tuple[str, ...]
    priors: TissuePriorSet
    priors_source: str
    ranges: ParamRanges
    augment: AugmentPlan
    lesion: LesionStampConfig | None
    lesion_label: int
    base_dir: Path

    @property
    def labels_path(self) -> Path | None:
        if self.labels is None:
            return None
        return (self.base_dir / self.labels).resolve()

    @property
    def qmaps_path(self) -> Path | None:
        if self.qmaps_dir is None:
            return None
        return (self.base_dir / self.qmaps_dir).resolve()

    @property
    def out_path(self) -> Path:
        return (self.base_dir / self.out_dir).resolve()

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(doc) - _CONFIG_KEYS
        _require(not unknown, "", f"unknown keys {sorted(unknown)}")
        base_dir = Path(base_dir)

        labels = doc.get("labels")
        _require(labels is None or isinstance(labels, str),
                 "labels", "must be a path string or null")
        qmaps_dir = doc.get("qmaps_dir")
        _require(qmaps_dir is None or isinstance(qmaps_dir, str),
                 "qmaps_dir", "must be a path string or null")
        if labels is not None:
            _require((base_dir / labels).is_file(), "labels",
                     f"file not found: {(base_dir / labels)}")
        if qmaps_dir is not None:
            _require((base_dir / qmaps_dir).is_dir(), "qmaps_dir",
                     f"directory not found: {(base_dir / qmaps_dir)}")

        out_dir = doc.get("out_dir", "out")
        _require(isinstance(out_dir, str) and out_dir != "",
                 "out_dir", "must be a nonempty path string")

        seed = doc.get("seed", 0)
        _require(isinstance(seed, int) and not isinstance(seed, bool)
                 and seed >= 0, "seed", "must be a nonnegative integer")

        count = doc.get("count", 1)
        _require(isinstance(count, int) and not isinstance(count, bool)
                 and count >= 0, "count", "must be a nonnegative integer")

        sequences = doc.get("sequences", ["FSE", "MPRAGE"])
        _require(isinstance(sequences, (list, tuple)) and len(sequences) > 0,
                 "sequences", "must be a nonempty list")
        resolved_seqs = []
        for s in sequences:
            _require(isinstance(s, str), "sequences", f"{s!r} is not a name")
            up = s.upper()
            _require(up in SEQUENCES, "sequences",
                     f"unknown sequence {s!r}, expected one of {SEQUENCES}")
            resolved_seqs.append(up)
        _require(len(set(resolved_seqs)) == len(resolved_seqs),
                 "sequences", "duplicate sequence names")

        priors_doc = doc.get("priors")
        try:
            if priors_doc is None:
                priors, priors_source = default_priors(), "default"
            elif isinstance(priors_doc, str):
                priors = load_priors(base_dir / priors_doc)
                priors_source = priors_doc
            elif isinstance(priors_doc, dict):
                priors = priors_from_dict(priors_doc)
                priors_source = "inline"
            else:
                raise ConfigError(
                    "config.priors: must be a path, an object, or null")
        except (PriorError, OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config.priors: {exc}") from exc

        ranges_doc = doc.get("ranges")
        try:
            ranges = (DEFAULT_RANGES if ranges_doc is None
                      else ParamRanges.from_dict(ranges_doc))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config.ranges: {exc}") from exc
        for seq in resolved_seqs:
            _require(seq in ranges.by_sequence, "ranges",
                     f"no parameter ranges for sequence {seq!r}")

        # absent -> the full default plan; null or {} -> corruption off
        try:
            if "augment" not in doc:
                augment = AugmentPlan.default()
            elif doc["augment"] is None:
                augment = AugmentPlan()
            else:
                augment = AugmentPlan.from_dict(doc["augment"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config.augment: {exc}") from exc

        lesion_doc = doc.get("lesion")
        if lesion_doc is None:
            lesion = None
        else:
            _require(isinstance(lesion_doc, dict), "lesion",
                     "must be an object or null")
            unknown = set(lesion_doc) - _LESION_KEYS
            _require(not unknown, "lesion", f"unknown keys {sorted(unknown)}")
            fields = dict(lesion_doc)
            for key in ("count_range", "size_scale_mm", "replace_labels"):
                if key in fields and isinstance(fields[key], list):
                    fields[key] = tuple(fields[key])
            try:
                lesion = LesionStampConfig(**fields)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"config.lesion: {exc}") from exc

        lesion_label = doc.get("lesion_label", 5)
        _require(isinstance(lesion_label, int)
                 and not isinstance(lesion_label, bool) and lesion_label > 0,
                 "lesion_label", "must be a positive integer")

        return cls(labels=labels, qmaps_dir=qmaps_dir, out_dir=out_dir,
                   seed=seed, count=count, sequences=tuple(resolved_seqs),
                   priors=priors, priors_source=priors_source, ranges=ranges,
                   augment=augment, lesion=lesion, lesion_label=lesion_label,
                   base_dir=base_dir)

    @classmethod
    def from_file(cls, path, seed: int | None = None,
                  out_dir: str | None = None) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if seed is not None:
            doc["seed"] = seed
        if out_dir is not None:
            doc["out_dir"] = out_dir
        return cls.from_dict(doc, base_dir=path.parent)

    def to_dict(self) -> dict:
        """The resolved document: every default made explicit, priors
        inlined so the run is reproducible from this dict alone."""
        return {
            "labels": self.labels,
            "qmaps_dir": self.qmaps_dir,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "count": self.count,
            "sequences": list(self.sequences),
            "priors": self.priors.to_dict(),
            "ranges": self.ranges.to_dict(),
            "augment": self.augment.to_dict(),
            "lesion": None if self.lesion is None else {
                "count_range": list(self.lesion.count_range),
                "size_scale_mm": list(self.lesion.size_scale_mm),
                "irregularity": self.lesion.irregularity,
                "replace_labels": list(self.lesion.replace_labels),
            },
            "lesion_label": self.lesion_label,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
