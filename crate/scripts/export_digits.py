#!/usr/bin/env python3
"""Export the scikit-learn handwritten-digits corpus (1797 8x8 images of the
digits 0-9) to IDX archives, the same binary layout MNIST ships in. Used to
regenerate the committed files under data/.

The corpus is shuffled once with a fixed seed and split into a training
archive (1500 records) and a test archive (297 records), mirroring the
two-archive layout of MNIST. Pixel intensities 0..16 are rescaled to 0..255.
"""

import struct

import numpy as np
from sklearn.datasets import load_digits

OUT = "data"
SEED = 20240901
TRAIN_N = 1500


def write_idx(prefix: str, images: np.ndarray, labels: np.ndarray) -> None:
    n = images.shape[0]
    with open(f"{OUT}/{prefix}-images-idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x0803, n, 8, 8))
        fh.write(images.astype(np.uint8).tobytes())
    with open(f"{OUT}/{prefix}-labels-idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 0x0801, n))
        fh.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    x, y = load_digits(return_X_y=True)
    x = np.rint(x * 255.0 / 16.0).clip(0, 255)
    rng = np.random.default_rng(SEED)
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    write_idx("digits-train", x[:TRAIN_N], y[:TRAIN_N])
    write_idx("digits-test", x[TRAIN_N:], y[TRAIN_N:])
    print(f"wrote {TRAIN_N} train / {len(y) - TRAIN_N} test records to {OUT}/")


if __name__ == "__main__":
    main()
