#!/usr/bin/env python3
"""Write an ellipsoid phantom label map for quick experiments."""

import argparse

import numpy as np

from mrisynth.nifti import write_nifti
from mrisynth.phantom import make_phantom_labels


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", type=int, nargs=3, default=(64, 64, 64))
    ap.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="labels.nii.gz")
    args = ap.parse_args()

    labels = make_phantom_labels(dims=tuple(args.dims),
                                 spacing=tuple(args.spacing), seed=args.seed)
    write_nifti(labels.grid, args.out, dtype=np.int16)
    print(f"wrote {args.out} with labels {labels.labels_present()}")


if __name__ == "__main__":
    main()
