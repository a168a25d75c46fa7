#!/usr/bin/env python3
"""Write a class-balanced MNIST subset as IDX files.

The source is the 5000-image MNIST sample bundled inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz: 784 pixel columns followed by the label).

    pip download --no-deps mlxtend -d /tmp/wheels
    python3 scripts/extract_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist 500
"""
import gzip
import struct
import sys
import zipfile


def main():
    wheel, out_dir, per_class = sys.argv[1], sys.argv[2], int(sys.argv[3])
    with zipfile.ZipFile(wheel) as z:
        text = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    by_class = {d: [] for d in range(10)}
    for line in text.strip().split("\n"):
        cols = line.split(",")
        label = int(float(cols[-1]))
        if len(by_class[label]) < per_class:
            by_class[label].append(bytes(int(float(v)) for v in cols[:-1]))
    images, labels = [], []
    # interleave classes so any prefix stays roughly balanced
    for i in range(per_class):
        for d in range(10):
            images.append(by_class[d][i])
            labels.append(d)
    n = len(images)
    with open(f"{out_dir}/images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            f.write(img)
    with open(f"{out_dir}/labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))


if __name__ == "__main__":
    main()
