"""Rebuild data/mnist2560 from the MNIST sample bundled in the mlxtend wheel.

Usage: python tools/make_mnist_subset.py path/to/mlxtend-0.24.0-py3-none-any.whl [outdir]

mlxtend ships 5000 MNIST test digits as mnist_5k.csv.gz (784 pixels + label
per row). We take the first 256 of each class and shuffle with a fixed seed.
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

PER_CLASS = 256
SEED = 2560


def main():
    wheel = sys.argv[1]
    out = Path(sys.argv[2] if len(sys.argv) > 2 else Path(__file__).resolve().parent.parent / "data" / "mnist2560")
    raw = gzip.decompress(zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    a = np.loadtxt(io.StringIO(raw), delimiter=",")
    y = a[:, 784].astype(int)
    idx = np.concatenate([np.where(y == k)[0][:PER_CLASS] for k in range(10)])
    idx = idx[np.random.default_rng(SEED).permutation(len(idx))]
    images = a[idx, :784].astype(np.uint8)
    labels = y[idx].astype(np.uint8)
    out.mkdir(parents=True, exist_ok=True)
    n = len(idx)
    (out / "mnist2560-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + images.tobytes())
    (out / "mnist2560-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, n) + labels.tobytes())


if __name__ == "__main__":
    main()
