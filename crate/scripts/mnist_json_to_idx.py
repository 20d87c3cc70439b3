#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package to IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_json_to_idx.py package/src/digits data/mnist

Every fifth example of each class goes to the test split, the rest to train.
Pixel intensities (stored as decimals in [0, 1]) are rounded to bytes.
"""
import json
import os
import struct
import sys


def write_idx(path, dims, payload):
    with open(path, "wb") as f:
        f.write(bytes([0, 0, 0x08, len(dims)]))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    src, dst = sys.argv[1], sys.argv[2]
    os.makedirs(dst, exist_ok=True)
    splits = {"train": ([], []), "test": ([], [])}
    per_class = []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            raw = json.load(f)["data"]
        n = len(raw) // 784
        per_class.append([raw[i * 784:(i + 1) * 784] for i in range(n)])
    # interleave classes so files are not sorted by label
    longest = max(len(c) for c in per_class)
    for i in range(longest):
        for digit, images in enumerate(per_class):
            if i >= len(images):
                continue
            split = "test" if i % 5 == 4 else "train"
            pixels = bytes(max(0, min(255, round(v * 255))) for v in images[i])
            splits[split][0].append(pixels)
            splits[split][1].append(digit)
    for name, (images, labels) in splits.items():
        write_idx(os.path.join(dst, f"{name}-images-idx3-ubyte"), [len(images), 28, 28], b"".join(images))
        write_idx(os.path.join(dst, f"{name}-labels-idx1-ubyte"), [len(labels)], bytes(labels))
        print(name, len(images))


if __name__ == "__main__":
    main()
