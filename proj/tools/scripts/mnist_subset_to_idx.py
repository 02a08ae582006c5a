#!/usr/bin/env python3
"""Convert a CSV MNIST subset (784 pixel columns then the label) to gzipped IDX files.

Usage: mnist_subset_to_idx.py <subset.csv[.gz]> <out-dir>

The mlxtend wheel ships mlxtend/data/data/mnist_5k.csv.gz, 500 samples per digit.
"""
import gzip
import struct
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    opener = gzip.open if src.suffix == ".gz" else open
    images, labels = bytearray(), bytearray()
    count = 0
    with opener(src, "rt") as fh:
        for line in fh:
            fields = line.strip().split(",")
            if len(fields) != 785:
                raise SystemExit(f"row {count + 1}: expected 785 fields, got {len(fields)}")
            images.extend(int(v) for v in fields[:784])
            labels.append(int(fields[784]))
            count += 1
    out.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the output byte-identical across runs
    with gzip.GzipFile(out / "subset-images-idx3-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 2051, count, 28, 28) + bytes(images))
    with gzip.GzipFile(out / "subset-labels-idx1-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 2049, count) + bytes(labels))
    print(f"wrote {count} samples to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
