"""Seeded end-to-end runs: label map -> qMRI -> sequences -> corruption.

Every random decision is keyed by ``derive_seed(master, stage, sample,
...)`` rather than consumed from one stream, so adding or removing a
stage never perturbs unrelated draws, samples can run on any number of
worker threads, and a manifest (resolved config + master seed) replays
to byte-identical files.

Per sample, one spatial transform is shared by all requested sequences
(multi-contrast outputs of a sample stay co-registered, and one cropped
label map serves them all); the intensity corruption chain is drawn per
(sample, sequence).
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .corruption import apply_intensity, spatial_augment
from .metrics import MetricReport, SegMaskPair, dice, hd95
from .nifti import read_nifti, write_nifti
from .priors import CHANNELS
from .qmaps import generate_lesion_mask, sample_qmri, stamp_lesion
from .seeds import derive_seed
from .sequences import ReceiveField, sample_params, simulate
from .volume import LabelVolume, QmriVolume


class DataError(RuntimeError):
    """Runtime data problem: missing/unpaired files, checksum mismatch."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_labels(config: RunConfig) -> LabelVolume:
    grid = read_nifti(config.labels_path)
    present = sorted(int(v) for v in np.unique(grid.data))
    missing = [v for v in present if v not in config.priors]
    if missing:
        raise ConfigError(
            f"labels contain values without a prior: {missing}")
    names = dict(config.priors.label_names())
    names[0] = "background"
    return LabelVolume(grid=grid, label_names=names)


def _preflight(config: RunConfig, need_labels: bool) -> LabelVolume | None:
    """Validate everything that needs file contents, before any write."""
    if config.qmaps_path is not None and not need_labels:
        return None
    if config.labels_path is None:
        raise ConfigError(
            "config.labels: a label volume is required for this command")
    labels = _load_labels(config)
    if config.lesion is not None and config.lesion_label not in config.priors:
        raise ConfigError(
            f"config.lesion_label: label {config.lesion_label} has no prior")
    return labels


def _sample_labels(config: RunConfig, labels: LabelVolume,
                   index: int) -> LabelVolume:
    """Per-sample label map: the input, optionally with stamped lesions."""
    if config.lesion is None:
        return labels
    mask = generate_lesion_mask(labels.grid.dims, labels.grid.spacing,
                                config.lesion,
                                derive_seed(config.seed, "lesion", index))
    # rebuild on the label grid so affines match exactly
    mask = labels.grid.with_data(mask.data)
    return stamp_lesion(labels, mask, config.lesion_label,
                        replace=config.lesion.replace_labels)


def _synth_sample(config: RunConfig, labels: LabelVolume, index: int,
                  out: Path):
    labels_i = _sample_labels(config, labels, index)
    q = sample_qmri(labels_i, config.priors,
                    derive_seed(config.seed, "qmri", index))
    outputs = []
    for ch in CHANNELS:
        name = f"{index:05d}_qmap_{ch}.nii.gz"
        write_nifti(q.channels()[ch], out / name)
        outputs.append({"file": name, "sha256": _sha256(out / name)})
    name = f"{index:05d}_qmap_labels.nii.gz"
    write_nifti(labels_i.grid, out / name, dtype=np.int16)
    outputs.append({"file": name, "sha256": _sha256(out / name)})
    return {
        "index": index,
        "seeds": {"lesion": derive_seed(config.seed, "lesion", index),
                  "qmri": derive_seed(config.seed, "qmri", index)},
        "outputs": outputs,
    }


def _manifest_config(config: RunConfig) -> dict:
    """Resolved config with input paths rewritten relative to the
    manifest's directory, so the output tree replays after a move."""
    doc = config.to_dict()
    if config.labels is not None:
        doc["labels"] = os.path.relpath(config.labels_path, config.out_path)
    if config.qmaps_dir is not None:
        doc["qmaps_dir"] = os.path.relpath(config.qmaps_path, config.out_path)
    return doc


def _manifest_inputs(config: RunConfig) -> dict:
    inputs = {}
    if config.labels_path is not None:
        inputs["labels"] = {"sha256": _sha256(config.labels_path)}
    return inputs


def _run_samples(profile, config: RunConfig, labels, threads: int) -> list:
    out = config.out_path
    out.mkdir(parents=True, exist_ok=True)
    indices = range(config.count)
    if threads <= 1:
        return [profile(config, labels, i, out) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(profile, config, labels, i, out)
                   for i in indices]
        return [f.result() for f in futures]


def run_synth_maps(config: RunConfig, threads: int = 1) -> dict:
    """Write per-sample quantitative maps (and the labels that produced
    them) plus a manifest. Returns the manifest."""
    labels = _preflight(config, need_labels=True)
    records = _run_samples(_synth_sample, config, labels, threads)
    manifest = {
        "engine": {"name": "mrisynth", "version": __version__},
        "command": "synth-maps",
        "config": _manifest_config(config),
        "inputs": _manifest_inputs(config),
        "samples": records,
    }
    _write_json(manifest, config.out_path / "manifest.json")
    return manifest


def _read_qmaps(config: RunConfig, index: int):
    src = config.qmaps_path
    grids = {}
    for ch in CHANNELS:
        path = src / f"{index:05d}_qmap_{ch}.nii.gz"
        if not path.is_file():
            raise DataError(f"missing quantitative map: {path}")
        grids[ch] = read_nifti(path)
    lab_path = src / f"{index:05d}_qmap_labels.nii.gz"
    if not lab_path.is_file():
        raise DataError(f"missing label map: {lab_path}")
    lab_grid = read_nifti(lab_path)
    names = dict(config.priors.label_names())
    names[0] = "background"
    for v in np.unique(lab_grid.data):
        names.setdefault(int(v), f"label {int(v)}")
    q = QmriVolume(**grids)
    return q, LabelVolume(grid=lab_grid, label_names=names)


def _simulate_sample(config: RunConfig, labels, index: int, out: Path):
    if config.qmaps_path is not None:
        q, labels_i = _read_qmaps(config, index)
    else:
        # same derivations as run_synth_maps: simulating straight from
        # labels equals simulating from previously written maps
        labels_i = _sample_labels(config, labels, index)
        q = sample_qmri(labels_i, config.priors,
                        derive_seed(config.seed, "qmri", index))

    b1 = ReceiveField.uniform_like(q.pd)
    images = []
    records = {}
    for seq in config.sequences:
        params_seed = derive_seed(config.seed, "params", index, seq)
        params = sample_params(config.ranges, seq, params_seed)
        images.append(simulate(q, params, b1))
        records[seq] = {"seed_params": params_seed,
                        "params": params.to_dict()}

    spatial_seed = derive_seed(config.seed, "spatial", index)
    images, labels_i, realized = spatial_augment(
        images, config.augment, spatial_seed, labels=labels_i)

    outputs = []
    for seq, image in zip(config.sequences, images):
        intensity_seed = derive_seed(config.seed, "intensity", index, seq)
        image, intensity = apply_intensity(image, config.augment,
                                           intensity_seed)
        records[seq]["seed_intensity"] = intensity_seed
        records[seq]["intensity"] = intensity
        name = f"{index:05d}_{seq.lower()}_image.nii.gz"
        write_nifti(image, out / name)
        outputs.append({"file": name, "sha256": _sha256(out / name)})

    name = f"{index:05d}_labels.nii.gz"
    write_nifti(labels_i.grid, out / name, dtype=np.int16)
    outputs.append({"file": name, "sha256": _sha256(out / name)})

    return {
        "index": index,
        "seeds": {"spatial": spatial_seed},
        "spatial": realized,
        "sequences": records,
        "outputs": outputs,
    }


def run_simulate(config: RunConfig, threads: int = 1) -> dict:
    """Simulate, corrupt, and write one image per (sample, sequence) plus
    one cropped label map per sample. Returns the manifest."""
    labels = _preflight(config, need_labels=config.qmaps_path is None)
    records = _run_samples(_simulate_sample, config, labels, threads)
    manifest = {
        "engine": {"name": "mrisynth", "version": __version__},
        "command": "simulate",
        "config": _manifest_config(config),
        "inputs": _manifest_inputs(config),
        "samples": records,
    }
    _write_json(manifest, config.out_path / "manifest.json")
    return manifest


def _binarize(grid, label):
    if label is None:
        return grid
    return grid.with_data((grid.data == float(label)).astype(np.float32))


def run_evaluate(pred_dir, truth_dir, out_dir, label: int | None = None,
                 pad_to: int = 256, resamples: int = 10_000,
                 level: float = 0.95, seed: int = 0,
                 directed: str = "union", threads: int = 1) -> MetricReport:
    """Score mask pairs matched by filename and write report.json/.txt.

    Masks must already be binary unless ``label`` selects the foreground
    value to binarize on.
    """
    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    preds = {p.name for p in pred_dir.glob("*.nii.gz")}
    truths = {p.name for p in truth_dir.glob("*.nii.gz")}
    if preds != truths:
        only_p = sorted(preds - truths)
        only_t = sorted(truths - preds)
        raise DataError(f"unpaired mask files: prediction-only {only_p}, "
                        f"truth-only {only_t}")
    names = sorted(preds)
    if not names:
        raise DataError(f"no mask pairs found in {pred_dir} and {truth_dir}")

    def score(name):
        try:
            pair = SegMaskPair(_binarize(read_nifti(pred_dir / name), label),
                               _binarize(read_nifti(truth_dir / name), label))
            return dice(pair), hd95(pair, pad_to=pad_to, directed=directed)
        except ValueError as exc:
            raise DataError(f"{name}: {exc}") from exc

    if threads <= 1:
        scored = [score(n) for n in names]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(score, names))

    report = MetricReport.from_cases(
        names, [s[0] for s in scored], [s[1] for s in scored],
        resamples=resamples, level=level, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.to_text())
    return report


def run_preview(image_path, axis: int, index: int | None, out_path) -> Path:
    """Save one slice as an 8-bit grayscale PNG, windowed to the slice's
    [0.5, 99.5] percentile range."""
    from PIL import Image

    grid = read_nifti(image_path)
    if axis not in (0, 1, 2):
        raise ConfigError(f"axis must be 0, 1, or 2, got {axis}")
    n = grid.dims[axis]
    if index is None:
        index = n // 2
    if not 0 <= index < n:
        raise DataError(f"slice index {index} out of range for axis {axis} "
                        f"with {n} slices")
    sl = np.take(grid.data, index, axis=axis).astype(np.float64)
    lo, hi = np.percentile(sl, [0.5, 99.5])
    if hi > lo:
        img = np.clip((sl - lo) / (hi - lo), 0.0, 1.0) * 255.0
    else:
        img = np.zeros_like(sl)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.rint(img).astype(np.uint8).T, mode="L").save(out_path)
    return out_path


_COMMANDS = {"synth-maps": run_synth_maps, "simulate": run_simulate}


def run_replay(manifest_path, out_dir, threads: int = 1) -> dict:
    """Re-execute a manifest into ``out_dir`` and verify byte identity.

    Returns ``{"files": n, "command": ...}`` on success; any checksum
    difference (inputs or outputs) raises DataError.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from exc
    for key in ("command", "config", "samples"):
        if key not in doc:
            raise DataError(f"manifest is missing {key!r}")
    if doc["command"] not in _COMMANDS:
        raise DataError(f"manifest command {doc['command']!r} is not "
                        f"replayable")

    config_doc = dict(doc["config"])
    config_doc["out_dir"] = str(out_dir)
    config = RunConfig.from_dict(config_doc, base_dir=manifest_path.parent)

    recorded_inputs = doc.get("inputs", {})
    if "labels" in recorded_inputs and config.labels_path is not None:
        got = _sha256(config.labels_path)
        want = recorded_inputs["labels"]["sha256"]
        if got != want:
            raise DataError(f"input label file changed since the manifest "
                            f"was written (sha256 {got} != {want})")

    new = _COMMANDS[doc["command"]](config, threads=threads)

    def checksums(manifest):
        table = {}
        for rec in manifest["samples"]:
            for entry in rec["outputs"]:
                table[entry["file"]] = entry["sha256"]
        return table

    want = checksums(doc)
    got = checksums(new)
    bad = sorted(set(want) ^ set(got)) + sorted(
        f for f in set(want) & set(got) if want[f] != got[f])
    if bad:
        raise DataError(f"replay outputs differ from the manifest: {bad}")
    return {"command": doc["command"], "files": len(want)}
