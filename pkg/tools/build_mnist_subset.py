"""Cut a 10,000/2,000 train/test subset out of the MNIST IDX files.

The subset is drawn without replacement (fixed seed) from the official
60,000-image training split and 10,000-image test split, and written as
gzip-compressed IDX so it can live in the repository.

The originals can come from anywhere; the npm package ``mnist-data`` ships
them unmodified under ``package/data/``::

    npm pack mnist-data@1.2.6
    python tools/build_mnist_subset.py mnist-data-1.2.6.tgz data/mnist-subset

A directory holding the four ``*-ubyte`` files works as the source too.
"""

import argparse
import gzip
import hashlib
import struct
import tarfile
from pathlib import Path

import numpy as np

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def read_sources(src):
    src = Path(src)
    out = {}
    if src.is_dir():
        for key, name in FILES.items():
            out[key] = (src / name).read_bytes()
    else:
        with tarfile.open(src) as tar:
            for key, name in FILES.items():
                out[key] = tar.extractfile(f"package/data/{name}").read()
    return out


def parse(raw, magic):
    found, = struct.unpack(">I", raw[:4])
    if found != magic:
        raise SystemExit(f"bad magic 0x{found:08x}")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    return np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims)


def write_pair(out, stem, images, labels):
    with gzip.GzipFile(out / f"{stem}-images-idx3-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">4I", 0x00000803, *images.shape))
        fh.write(images.tobytes())
    with gzip.GzipFile(out / f"{stem}-labels-idx1-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">2I", 0x00000801, len(labels)))
        fh.write(labels.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", help="mnist-data npm tarball or directory of IDX files")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=10000)
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    raw = read_sources(args.source)
    for key, blob in raw.items():
        print(f"{FILES[key]}: {len(blob)} bytes, sha256 {hashlib.sha256(blob).hexdigest()}")
    xtr = parse(raw["train_images"], 0x00000803)
    ytr = parse(raw["train_labels"], 0x00000801)
    xte = parse(raw["test_images"], 0x00000803)
    yte = parse(raw["test_labels"], 0x00000801)

    rng = np.random.default_rng(args.seed)
    tr = np.sort(rng.choice(len(xtr), size=args.train, replace=False))
    te = np.sort(rng.choice(len(xte), size=args.test, replace=False))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pair(out, "train", xtr[tr], ytr[tr])
    write_pair(out, "test", xte[te], yte[te])
    print(f"train: {len(tr)} images, per-class {np.bincount(ytr[tr], minlength=10).tolist()}")
    print(f"test:  {len(te)} images, per-class {np.bincount(yte[te], minlength=10).tolist()}")


if __name__ == "__main__":
    main()
