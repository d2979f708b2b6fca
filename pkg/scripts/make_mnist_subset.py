"""Convert the 5,000-digit MNIST sample shipped inside the mlxtend wheel to IDX.

    pip download --no-deps mlxtend -d /tmp/wheels
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl tests/data

Writes mnist5k-{train,test}-{images,labels}-idx?-ubyte.gz. The source rows are
sorted by digit, so they are shuffled with a fixed permutation (seed 0) before
the first 4,000 become train and the last 1,000 test.
"""

import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from cocgan.data import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(wheel, out_dir):
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :784].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[:, 784].astype(np.uint8)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, sl in (("train", slice(0, 4000)), ("test", slice(4000, 5000))):
        write_idx(images[sl], labels[sl],
                  out / f"mnist5k-{split}-images-idx3-ubyte.gz",
                  out / f"mnist5k-{split}-labels-idx1-ubyte.gz")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
