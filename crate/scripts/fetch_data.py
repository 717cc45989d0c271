#!/usr/bin/env python3
"""Build IDX-format MNIST / Fashion-MNIST files from the npm-published JSON bundles.

The `mnist` npm package ships 10,000 digits (roughly 1,000 per class); the
`fashion-mnist` package ships all 70,000 articles (7,000 per class). Both store
pixels as JSON arrays. This script writes them out as gzip-compressed IDX files
with the canonical filenames:

    train-images-idx3-ubyte.gz  train-labels-idx1-ubyte.gz
    t10k-images-idx3-ubyte.gz   t10k-labels-idx1-ubyte.gz

Usage:
    scripts/fetch_data.py mnist   [--out data/mnist]
    scripts/fetch_data.py fashion [--out data/fashion]

Requires `npm` on PATH (only `npm pack` is used; nothing is installed).
"""
import argparse
import gzip
import json
import os
import random
import struct
import subprocess
import tarfile
import tempfile

PACKAGES = {
    "mnist": ("mnist", "package/src/digits/{}.json"),
    "fashion": ("fashion-mnist", "package/src/clothes/{}.json"),
}


def load_class_rows(tar, member):
    raw = json.load(tar.extractfile(member))["data"]
    if raw and isinstance(raw[0], list):
        rows = raw
    else:
        rows = [raw[i:i + 784] for i in range(0, len(raw), 784)]
    out = []
    for row in rows:
        if len(row) != 784:
            # the fashion bundle carries a few empty records
            continue
        if any(isinstance(v, float) for v in row):
            # mnist stores v/255 rounded to 3 decimals, which still recovers the byte exactly
            out.append(bytes(int(round(v * 255)) for v in row))
        else:
            out.append(bytes(int(v) for v in row))
    return out


def write_idx(path, images, labels):
    with gzip.GzipFile(path[0], "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(img)
    with gzip.GzipFile(path[1], "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dataset", choices=sorted(PACKAGES))
    ap.add_argument("--out")
    ap.add_argument("--tarball", help="use an already downloaded npm tarball")
    args = ap.parse_args()
    pkg, pattern = PACKAGES[args.dataset]
    out = args.out or os.path.join("data", args.dataset)
    os.makedirs(out, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball
        if tarball is None:
            name = subprocess.check_output(["npm", "pack", pkg], cwd=tmp, text=True).strip().splitlines()[-1]
            tarball = os.path.join(tmp, name)
        train, test = [], []
        with tarfile.open(tarball) as tar:
            for label in range(10):
                rows = load_class_rows(tar, pattern.format(label))
                if args.dataset == "mnist":
                    # every fifth digit of a class goes to the test split
                    for i, r in enumerate(rows):
                        (test if i % 5 == 4 else train).append((r, label))
                else:
                    # 6,000 train + 1,000 test per class, as in the original release
                    train += [(r, label) for r in rows[:6000]]
                    test += [(r, label) for r in rows[6000:]]

    rng = random.Random(20190601)
    rng.shuffle(train)
    rng.shuffle(test)
    for split, items in (("train", train), ("t10k", test)):
        write_idx(
            (os.path.join(out, f"{split}-images-idx3-ubyte.gz"), os.path.join(out, f"{split}-labels-idx1-ubyte.gz")),
            [r for r, _ in items],
            [l for _, l in items],
        )
        print(f"{args.dataset} {split}: {len(items)} examples -> {out}")


if __name__ == "__main__":
    main()
