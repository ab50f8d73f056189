#!/usr/bin/env python3
"""(Re)build the committed reference run under assets/golden.

The golden tree pins the full pipeline byte-for-byte: a phantom label
map, a resolved config, the simulate outputs with their manifest, mock
segmentations of the corrupted images, and the evaluation report.  The
replay acceptance test re-executes the manifest and re-derives the
masks and report, comparing everything against these files.

Only rerun this script deliberately (engine behavior change); commit
the refreshed tree with the change that caused it.
"""

import json
import shutil
from pathlib import Path

import numpy as np

from mrisynth.config import RunConfig
from mrisynth.inference import (
    ThresholdPredictor,
    WindowSpec,
    ensemble_logits,
    logits_to_mask,
    tta_predict,
)
from mrisynth.metrics import normalize
from mrisynth.nifti import read_nifti, write_nifti
from mrisynth.phantom import make_phantom_labels
from mrisynth.pipeline import run_evaluate, run_simulate

GOLDEN_SEED = 20260815

CONFIG_DOC = {
    "labels": "../labels.nii.gz",
    "out_dir": ".",
    "seed": GOLDEN_SEED,
    "count": 2,
    "sequences": ["FSE", "MPRAGE"],
    "lesion": {"count_range": [1, 2], "size_scale_mm": [5.0, 9.0]},
    "augment": {
        "flip_prob": [0.5, 0.5, 0.5],
        "crop": {"dims": [24, 24, 24], "require_lesion": True},
        "bias": {"amplitude": 0.25, "fwhm_mm": 48.0},
        "gibbs": {"kept_fraction": [0.7, 1.0]},
        "lowres": {"spacing_mm": [1.5, 3.0]},
        "rician": {"sigma": [0.01, 0.04], "relative": True},
    },
}

PREDICT_DOC = {
    "normalize": "percentile_clip_zscore",
    "threshold": 2.0,
    "patch": [16, 16, 16],
    "overlap": 0.5,
    "lesion_class": 1,
}


def predict_masks(run_dir: Path, pred_dir: Path, truth_dir: Path,
                  count: int, sequences, predict_doc: dict) -> None:
    """Segment each sample's corrupted images with the mock model and
    write prediction/truth mask pairs. Shared with the replay test."""
    pred_dir.mkdir(parents=True, exist_ok=True)
    truth_dir.mkdir(parents=True, exist_ok=True)
    model = ThresholdPredictor(threshold=predict_doc["threshold"])
    spec = WindowSpec(patch=tuple(predict_doc["patch"]),
                      overlap=predict_doc["overlap"])
    for i in range(count):
        per_contrast = []
        for seq in sequences:
            img = read_nifti(run_dir / f"{i:05d}_{seq.lower()}_image.nii.gz")
            per_contrast.append(tta_predict(normalize(img), model, spec))
        mask = logits_to_mask(ensemble_logits(per_contrast),
                              lesion_class=predict_doc["lesion_class"])
        lab = read_nifti(run_dir / f"{i:05d}_labels.nii.gz")
        write_nifti(lab.with_data(mask.astype(np.float32)),
                    pred_dir / f"{i:05d}_mask.nii.gz", dtype=np.uint8)
        write_nifti(lab.with_data((lab.data == 5.0).astype(np.float32)),
                    truth_dir / f"{i:05d}_mask.nii.gz", dtype=np.uint8)


def build(golden: Path) -> None:
    if golden.exists():
        shutil.rmtree(golden)
    golden.mkdir(parents=True)

    labels = make_phantom_labels(dims=(32, 32, 32), seed=GOLDEN_SEED)
    write_nifti(labels.grid, golden / "labels.nii.gz", dtype=np.int16)

    run_dir = golden / "run"
    run_dir.mkdir()
    (run_dir / "config.json").write_text(
        json.dumps(CONFIG_DOC, indent=2, sort_keys=True) + "\n")
    (golden / "predict.json").write_text(
        json.dumps(PREDICT_DOC, indent=2, sort_keys=True) + "\n")

    config = RunConfig.from_file(run_dir / "config.json")
    run_simulate(config)

    predict_masks(run_dir, golden / "pred", golden / "truth",
                  CONFIG_DOC["count"], CONFIG_DOC["sequences"], PREDICT_DOC)
    report = run_evaluate(golden / "pred", golden / "truth",
                          golden / "report", resamples=2000, seed=0)
    print(report.to_text(), end="")
    files = sorted(p.relative_to(golden) for p in golden.rglob("*")
                   if p.is_file())
    print(f"golden tree rebuilt: {len(files)} files under {golden}")


if __name__ == "__main__":
    build(Path(__file__).resolve().parent.parent / "assets" / "golden")
