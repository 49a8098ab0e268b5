#!/usr/bin/env python3
"""Write the 5000-sample MNIST subset bundled with mlxtend as IDX files.

Usage:
    pip download mlxtend --no-deps -d /tmp/wheel
    python scripts/mnist_subset_to_idx.py /tmp/wheel/mlxtend-*.whl data/mnist

The subset is split per class: the last ``--test-per-class`` samples of each
digit go to the t10k files, the rest to the train files.
"""
import argparse
import gzip
import io
import struct
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_idx(path: Path, images: np.ndarray, labels_path: Path, labels: np.ndarray):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        fh.write(images.astype(np.uint8).tobytes())
    with gzip.GzipFile(labels_path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 2049, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("wheel", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args()

    raw = gzip.decompress(zipfile.ZipFile(args.wheel).read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    x, y = table[:, :-1], table[:, -1]
    test_idx = np.concatenate([np.flatnonzero(y == c)[-args.test_per_class:] for c in range(10)])
    is_test = np.zeros(len(y), bool)
    is_test[test_idx] = True
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train-images-idx3-ubyte.gz", x[~is_test],
              args.out / "train-labels-idx1-ubyte.gz", y[~is_test])
    write_idx(args.out / "t10k-images-idx3-ubyte.gz", x[is_test],
              args.out / "t10k-labels-idx1-ubyte.gz", y[is_test])
    print(f"train {int((~is_test).sum())}, test {int(is_test.sum())} -> {args.out}")


if __name__ == "__main__":
    main()
