#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package (10,000 MNIST
samples, pixels stored as value/255 rounded to 3 decimals) into gzipped IDX files.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/npm_mnist_to_idx.py package/src/digits data/mnist
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for k in range(len(data) // 784):
            pixels = bytes(round(v * 255) for v in data[k * 784:(k + 1) * 784])
            samples.append((pixels, digit))
    # The package stores samples grouped by digit; interleave them like the original files.
    random.Random(20240601).shuffle(samples)
    n = len(samples)
    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "train-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with gzip.GzipFile(dst / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
