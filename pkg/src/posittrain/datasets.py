"""Desk-scale handwritten-digit data in IDX format.

The images come from scikit-learn's bundled 8x8 digits (1797 samples,
no download needed). Each original is padded to 10x10 and every one-pixel
translation is kept, so the set grows ninefold; the train/validation split
is made on originals first, so shifted copies never straddle it.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .idx import write_idx

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "val_images": "val-images-idx3-ubyte",
    "val_labels": "val-labels-idx1-ubyte",
}


def _shifted(images: np.ndarray) -> np.ndarray:
    n, h, w = images.shape
    padded = np.zeros((n, h + 2, w + 2), dtype=images.dtype)
    padded[:, 1:-1, 1:-1] = images
    # the one-pixel zero border means a roll by +-1 never wraps ink around
    views = [np.roll(padded, (dy, dx), axis=(1, 2)) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    return np.stack(views, axis=1).reshape(n * 9, h + 2, w + 2)


def digits_arrays(val_fraction: float = 0.2, seed: int = 0, shifts: bool = True):
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    order = np.random.default_rng(seed).permutation(len(labels))
    n_val = int(round(len(labels) * val_fraction))
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])

    def expand(idx):
        x, y = images[idx], labels[idx]
        if not shifts:
            return x, y
        return _shifted(x), np.repeat(y, 9)

    return expand(train_idx), expand(val_idx)


def write_digits_idx(out_dir, **kwargs) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (xtr, ytr), (xva, yva) = digits_arrays(**kwargs)
    paths = {key: out / name for key, name in FILES.items()}
    write_idx(paths["train_images"], xtr)
    write_idx(paths["train_labels"], ytr)
    write_idx(paths["val_images"], xva)
    write_idx(paths["val_labels"], yva)
    return paths


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write the desk-scale digits dataset as IDX files.")
    parser.add_argument("out_dir")
    parser.add_argument("--no-shifts", action="store_true", help="keep only the original 8x8 images")
    args = parser.parse_args(argv)
    for key, path in write_digits_idx(args.out_dir, shifts=not args.no_shifts).items():
        print(f"{key}: {path}")


if __name__ == "__main__":
    main()
