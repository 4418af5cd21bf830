"""Rebuild the MNIST IDX files from the pickled copy shipped in the
``mnist-hub`` wheel on PyPI (the usual download hosts may be unreachable).

The pickle stores pixels as ``byte / 256`` in float32, so the original
bytes are recovered exactly. The 50k/10k train/validation split is
concatenated back into the 60k training set in its original order.

    python scripts/fetch_mnist.py data/mnist
"""
import argparse
import glob
import gzip
import io
import pickle
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from sdnverify.data import write_idx


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default="data/mnist")
    ap.add_argument("--wheel", help="use an already downloaded mnist_hub wheel")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel
        if wheel is None:
            subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                            "mnist-hub==0.1.4", "-d", tmp], check=True)
            wheel = glob.glob(f"{tmp}/mnist_hub-*.whl")[0]
        blob = zipfile.ZipFile(wheel).read("mnist/data/mnist.pkl.gz")
    train, valid, test = pickle.load(gzip.open(io.BytesIO(blob)), encoding="latin1")

    def to_bytes(x):
        b = np.rint(np.asarray(x, dtype=np.float64) * 256)
        assert b.min() >= 0 and b.max() <= 255
        return b.astype(np.uint8).reshape(-1, 28, 28)

    tr_x = np.concatenate([to_bytes(train[0]), to_bytes(valid[0])])
    tr_y = np.concatenate([train[1], valid[1]]).astype(np.uint8)
    write_idx(out / "train-images-idx3-ubyte.gz", tr_x)
    write_idx(out / "train-labels-idx1-ubyte.gz", tr_y)
    write_idx(out / "t10k-images-idx3-ubyte.gz", to_bytes(test[0]))
    write_idx(out / "t10k-labels-idx1-ubyte.gz", np.asarray(test[1], dtype=np.uint8))
    print(f"wrote MNIST IDX files to {out}")


if __name__ == "__main__":
    main()
