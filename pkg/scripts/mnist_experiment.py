"""MNIST with the external-LDOS input encoding.

Reads IDX files from a directory (official MNIST or the subset written by
export_mnist_idx.py).  The defaults are the desk-scale recipe; the full-scale
run is ``--n-train 60000 --n-test 10000 --hidden 100 64 --epochs 20`` and takes
days on one core.

    python scripts/mnist_experiment.py data/mnist-desk
"""
import argparse

from fnn.datasets.mnist import find_mnist, load_mnist
from fnn.model import ArchitectureSpec, InputEncoding, init_parameters, save_checkpoint
from fnn.training import TrainConfig, train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("directory")
    parser.add_argument("--n-train", type=int, default=2000)
    parser.add_argument("--n-test", type=int, default=500)
    parser.add_argument("--hidden", type=int, nargs="*", default=[64, 32])
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="mnist.fnn")
    args = parser.parse_args()

    def encoded(split, limit):
        return [(InputEncoding.external_ldos(s.pixels), s.label)
                for s in load_mnist(*find_mnist(args.directory, split), limit=limit)]

    train_set, test_set = encoded("train", args.n_train), encoded("test", args.n_test)
    cfg = TrainConfig(learning_rate=0.005, weight_decay=0.001, broadening=0.05, batch_size=1, epochs=args.epochs,
                      seed=args.seed, output_scale=20.0)
    params = init_parameters(ArchitectureSpec(784, args.hidden + [10]), args.seed)
    res = train(params, train_set, test_set, cfg, on_epoch=lambda rec, _: print(rec, flush=True))
    save_checkpoint(args.out, res.params)
    print(f"best epoch {res.best_epoch}: {res.metrics.best}")


if __name__ == "__main__":
    main()
