#!/usr/bin/env python3
"""Write a small MNIST subset as IDX files for `wsram gen-data --mnist-dir`.

The full MNIST archives are not always reachable; the 5000-digit sample
bundled with the mlxtend wheel is. That sample is sorted by label, so the
split is stratified: each class contributes the same fraction of its rows to
the training files (`--train` rows in total) and the rest to the t10k files,
and both files are shuffled with a fixed seed.

    python3 scripts/fetch_mnist_subset.py -o data/mnist
    python3 scripts/fetch_mnist_subset.py --wheel mlxtend-0.24.0-py3-none-any.whl -o data/mnist
"""

import argparse
import random
import gzip
import struct
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def find_wheel(explicit):
    if explicit:
        return Path(explicit)
    tmp = Path(tempfile.mkdtemp())
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(tmp), "mlxtend==0.24.0"],
        check=True,
    )
    return next(tmp.glob("mlxtend-*.whl"))


def write_idx(out, prefix, rows):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for pixels, _ in rows:
            f.write(bytes(pixels))
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(rows)))
        f.write(bytes(label for _, label in rows))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-o", "--out", required=True, type=Path)
    ap.add_argument("--wheel", help="local mlxtend wheel; downloaded with pip when absent")
    ap.add_argument("--train", type=int, default=4000, help="rows used for the training files")
    args = ap.parse_args()

    with zipfile.ZipFile(find_wheel(args.wheel)) as z:
        text = gzip.decompress(z.read(MEMBER)).decode()
    rows = []
    for line in text.splitlines():
        values = [int(float(v)) for v in line.split(",")]
        rows.append((values[:-1], values[-1]))
    if not 0 < args.train < len(rows):
        ap.error(f"--train must be in 1..{len(rows) - 1}")

    by_class = {}
    for row in rows:
        by_class.setdefault(row[1], []).append(row)
    train, test = [], []
    for label in sorted(by_class):
        members = by_class[label]
        k = round(len(members) * args.train / len(rows))
        train += members[:k]
        test += members[k:]
    rng = random.Random(0)
    rng.shuffle(train)
    rng.shuffle(test)

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out, "train", train)
    write_idx(args.out, "t10k", test)
    print(f"wrote {len(train)} train and {len(test)} test digits to {args.out}")


if __name__ == "__main__":
    main()
