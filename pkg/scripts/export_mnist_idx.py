"""Write the 5,000-image MNIST subset shipped with mlxtend as IDX files.

The images are shuffled with ``default_rng(seed)``; the first 2,000 go to the
train files and the remaining 3,000 to the t10k files, so ``fnn gen`` with
n_train=2000 and n_test=500 reproduces the desk-scale acceptance split.

    python scripts/export_mnist_idx.py data/mnist-desk
"""
import argparse
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from fnn.datasets.mnist import write_idx


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-train", type=int, default=2000)
    args = parser.parse_args()
    x, y = mnist_data()
    idx = np.random.default_rng(args.seed).permutation(len(y))
    images = x.reshape(-1, 28, 28).astype(np.uint8)
    labels = y.astype(np.uint8)
    args.out.mkdir(parents=True, exist_ok=True)
    for prefix, part in (("train", idx[:args.n_train]), ("t10k", idx[args.n_train:])):
        write_idx(args.out / f"{prefix}-images-idx3-ubyte", images[part])
        write_idx(args.out / f"{prefix}-labels-idx1-ubyte", labels[part])
        print(f"{prefix}: {len(part)} images")


if __name__ == "__main__":
    main()
