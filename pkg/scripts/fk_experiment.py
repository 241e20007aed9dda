"""Falicov-Kimball phase classification with DMFT inside the forward pass.

    python scripts/fk_experiment.py --side 4 --per-class 4 --epochs 50
"""
import argparse

from fnn.datasets.fk import FkDatasetConfig, fk_dataset
from fnn.dmft import encode_fk, train_interacting
from fnn.greens import MatsubaraGrid
from fnn.model import ArchitectureSpec, init_parameters
from fnn.training import TrainConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--side", type=int, default=4)
    parser.add_argument("--per-class", type=int, default=4)
    parser.add_argument("--test-per-class", type=int, default=0)
    parser.add_argument("--hidden", type=int, default=8)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--output-scale", type=float, default=20.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    shape = (args.side, args.side)
    train_set = [(encode_fk(i), l) for i, l in
                 fk_dataset(FkDatasetConfig(shape=shape, samples_per_class=args.per_class), args.seed)]
    test_set = []
    if args.test_per_class:
        test_set = [(encode_fk(i), l) for i, l in
                    fk_dataset(FkDatasetConfig(shape=shape, samples_per_class=args.test_per_class), args.seed + 1)]
    cfg = TrainConfig(learning_rate=0.05, weight_decay=1e-3, broadening=0.05, batch_size=1, epochs=args.epochs,
                      seed=args.seed, track_train_accuracy=True, output_scale=args.output_scale)
    params = init_parameters(ArchitectureSpec(args.side ** 2, [args.hidden, 2]), args.seed)
    res = train_interacting(params, train_set, test_set, cfg, MatsubaraGrid(0.005, 20),
                            on_epoch=lambda rec, _: print(rec, flush=True))
    print("skipped samples:", len(res.skipped))


if __name__ == "__main__":
    main()
