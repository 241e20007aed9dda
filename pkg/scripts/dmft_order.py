"""Checkerboard order of the particle-hole symmetric FK lattice against U.

    python scripts/dmft_order.py --side 8 --temperature 0.11
"""
import argparse

import numpy as np

from fnn.datasets.fk import FkInstance, fk_build
from fnn.dmft import dmft_solve
from fnn.greens import MatsubaraGrid


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--side", type=int, default=8)
    parser.add_argument("--temperature", type=float, default=0.11)
    parser.add_argument("--n0", type=int, default=20)
    parser.add_argument("--u", type=float, nargs="*", default=[1.0, 2.0, 3.0, 4.0])
    args = parser.parse_args()
    grid = MatsubaraGrid(args.temperature, args.n0)
    print("U\tcheckerboard\tstripe_x\titerations\tE_f")
    for u in args.u:
        inst = FkInstance.symmetric(u, args.temperature, (args.side, args.side))
        res = dmft_solve(fk_build(inst)[0], u, grid, shape=inst.shape)
        print(f"{u}\t{res.order['checkerboard']:.5f}\t{res.order['stripe_x']:.2e}\t{res.iterations}\t"
              f"{res.e_f:.4f}{'' if res.converged else '  (not converged)'}")


if __name__ == "__main__":
    main()
