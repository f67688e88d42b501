#!/usr/bin/env python3
"""Flattens the UCI HAR inertial signals back into one continuous CSV.

The distribution ships pre-windowed rows (128 samples, 50% overlap). Per
subject, consecutive rows overlap by 64 samples, so the stream is rebuilt
from the first row plus the second half of every following row. Labels are
expanded from per-window to per-sample. Output columns:

    body_acc_{x,y,z}, body_gyro_{x,y,z}, total_acc_{x,y,z}, label, subject
"""

import sys
from pathlib import Path

import numpy as np

SIGNALS = [
    "body_acc_x", "body_acc_y", "body_acc_z",
    "body_gyro_x", "body_gyro_y", "body_gyro_z",
    "total_acc_x", "total_acc_y", "total_acc_z",
]
LABELS = ["WALKING", "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS",
          "SITTING", "STANDING", "LAYING"]


def load_split(root: Path, split: str):
    signals = np.stack(
        [np.loadtxt(root / split / "Inertial Signals" / f"{name}_{split}.txt")
         for name in SIGNALS],
        axis=-1)  # [windows, 128, 9]
    labels = np.loadtxt(root / split / f"y_{split}.txt", dtype=int) - 1
    subjects = np.loadtxt(root / split / f"subject_{split}.txt", dtype=int)
    return signals, labels, subjects


def main():
    if len(sys.argv) != 3:
        print(f"usage: {sys.argv[0]} <UCI HAR Dataset dir> <output csv>", file=sys.stderr)
        return 2
    root, out_path = Path(sys.argv[1]), Path(sys.argv[2])

    parts = [load_split(root, split) for split in ("train", "test")]
    signals = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    subjects = np.concatenate([p[2] for p in parts])

    rows = []
    for subject in np.unique(subjects):
        idx = np.where(subjects == subject)[0]
        first = True
        for i in idx:
            window = signals[i]  # [128, 9]
            take = window if first else window[64:]
            first = False
            for sample in take:
                rows.append((sample, LABELS[labels[i]], subject))

    with open(out_path, "w") as f:
        for sample, label, subject in rows:
            f.write(",".join(f"{v:.6g}" for v in sample))
            f.write(f",{label},{subject}\n")
    print(f"wrote {len(rows)} samples for {len(np.unique(subjects))} subjects to {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
