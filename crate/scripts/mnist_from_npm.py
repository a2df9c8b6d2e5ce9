"""Convert the digit sample bundled with the `mnist` npm package into IDX files.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_from_npm.py package/src/digits data/mnist

Each class file holds 863 to 1127 28x28 digits. The first 700 of every class go to the
train split and the next 160 to the t10k split, interleaved by class.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

src, dst = Path(sys.argv[1]), Path(sys.argv[2])
dst.mkdir(parents=True, exist_ok=True)
per_class = []
for d in range(10):
    raw = json.loads((src / f"{d}.json").read_text())["data"]
    n = len(raw) // 784
    per_class.append([bytes(min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784]) for i in range(n)])

def write(prefix, lo, hi):
    imgs, labels = [], []
    for i in range(lo, hi):
        for d in range(10):
            imgs.append(per_class[d][i])
            labels.append(d)
    with gzip.GzipFile(dst / f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(imgs), 28, 28))
        f.write(b"".join(imgs))
    with gzip.GzipFile(dst / f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))

write("train", 0, 700)
write("t10k", 700, 860)
