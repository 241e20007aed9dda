"""First-layer / last-layer gradient ratio of the CC and LDOS heads on Chern data.

    python scripts/gradient_profile.py --samples 200 --hidden 16 16 16 16 16 --seeds 0 1 2 3
"""
import argparse

import numpy as np

from fnn.backprop import gradient_layer_profile
from fnn.datasets.chern import generate_chern_dataset
from fnn.model import ArchitectureSpec, InputEncoding, init_parameters
from fnn.training import TrainConfig, train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=200)
    parser.add_argument("--hidden", type=int, nargs="*", default=[16] * 5)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--seeds", type=int, nargs="*", default=[0])
    args = parser.parse_args()

    samples, _ = generate_chern_dataset(args.samples, 0)
    data = [(InputEncoding.hamiltonian(s.hamiltonian), s.label) for s in samples]
    print("seed\thead\tmean ratio\tmedian ratio")
    for seed in args.seeds:
        for head, out, scale in (("cc", 1, 1.0), ("ldos", 2, 20.0)):
            cfg = TrainConfig(learning_rate=0.05, broadening=0.05, batch_size=10, epochs=args.epochs, head=head,
                              output_scale=scale, seed=0)
            ratios = []
            train(init_parameters(ArchitectureSpec(144, args.hidden + [out]), seed), data, [], cfg,
                  on_batch=lambda e, s, g: ratios.append(gradient_layer_profile(g)[0]))
            print(f"{seed}\t{head}\t{np.mean(ratios):.3f}\t{np.median(ratios):.3f}")


if __name__ == "__main__":
    main()
