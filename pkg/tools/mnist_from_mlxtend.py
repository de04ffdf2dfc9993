#!/usr/bin/env python3
"""Write the 5,000-image MNIST sample bundled with mlxtend as IDX files.

Useful when the full MNIST files cannot be downloaded.  The sample holds
500 images per digit; the first 400 of each digit become the "train"
files and the remaining 100 the "t10k" files.

    python3 tools/mnist_from_mlxtend.py data/mnist-5k
    satinit train --mnist-dir data/mnist-5k ...
"""
import os
import sys

import numpy as np

from satinit.mnist import (TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
                           encode_idx_images, encode_idx_labels)

PER_CLASS_TRAIN = 400


def build(out_dir):
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    X = X.astype(np.uint8).reshape(-1, 28, 28)
    train, test = [], []
    for digit in range(10):
        idx = np.flatnonzero(y == digit)
        train.extend(idx[:PER_CLASS_TRAIN])
        test.extend(idx[PER_CLASS_TRAIN:])
    # interleave classes the way the real files are (roughly) mixed
    rng = np.random.default_rng(0)
    train = rng.permutation(train)
    test = rng.permutation(test)
    os.makedirs(out_dir, exist_ok=True)
    files = {
        TRAIN_IMAGES: encode_idx_images(X[train]),
        TRAIN_LABELS: encode_idx_labels(y[train]),
        TEST_IMAGES: encode_idx_images(X[test]),
        TEST_LABELS: encode_idx_labels(y[test]),
    }
    for name, blob in files.items():
        with open(os.path.join(out_dir, name), "wb") as f:
            f.write(blob)
    return out_dir


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit("usage: mnist_from_mlxtend.py OUT_DIR")
    print(build(sys.argv[1]))
