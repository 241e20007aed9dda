"""Chern vs normal insulator classification with the conditional-conductance head.

Generates the disordered set, trains [144 -> hidden -> 1], prints test metrics and
the clean-model response across kappa, and writes the best checkpoint.

    python scripts/chern_experiment.py --samples 600 --epochs 6 --out runs/chern_cc.fnn
"""
import argparse
import time

import numpy as np

from fnn.cli import crossing_point
from fnn.datasets.chern import chern_hamiltonian, generate_chern_dataset
from fnn.model import ArchitectureSpec, InputEncoding, init_parameters, save_checkpoint
from fnn.training import RetardedEvaluator, TrainConfig, cc_probability, evaluate, train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=600)
    parser.add_argument("--train-fraction", type=float, default=2 / 3)
    parser.add_argument("--hidden", type=int, nargs="*", default=[16])
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="chern_cc.fnn")
    args = parser.parse_args()

    start = time.perf_counter()
    samples, report = generate_chern_dataset(args.samples, args.seed)
    print(f"generated {len(samples)} samples in {time.perf_counter() - start:.1f}s "
          f"(label preservation {report.preservation_rate:.2f})")
    data = [(InputEncoding.hamiltonian(s.hamiltonian), s.label) for s in samples]
    cut = int(args.train_fraction * len(data))
    cfg = TrainConfig(learning_rate=0.05, broadening=0.05, batch_size=10, epochs=args.epochs, head="cc",
                      seed=args.seed)
    params = init_parameters(ArchitectureSpec(144, args.hidden + [1]), args.seed)
    res = train(params, data[:cut], data[cut:], cfg, on_epoch=lambda rec, _: print(rec, flush=True))
    print("final", evaluate(res.final_params, data[cut:], cfg))

    ev = RetardedEvaluator(cfg)
    kappas = np.linspace(0.1, 1.0, 46)
    y0 = res.params.metadata["y0"]
    resp = [cc_probability(float(ev.forward(res.params, InputEncoding.hamiltonian(chern_hamiltonian(k)))[0]), y0)
            for k in kappas]
    for k, r in zip(kappas[::5], resp[::5]):
        print(f"kappa {k:.2f}  P(Chern) {r:.3f}")
    print("crossing", crossing_point(kappas, resp))
    save_checkpoint(args.out, res.params)


if __name__ == "__main__":
    main()
