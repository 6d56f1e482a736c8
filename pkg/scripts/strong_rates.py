"""Strong-error decay of the coupled kernels across levels.

For a builtin diffusion, propagates a batch of coupled paths through one
unit interval per level and reports three mean squared differences: the
antithetic average against the coarse path, the plain fine-coarse
difference of the Milstein triple, and the fine-coarse difference of the
Euler pair.  The fitted log2 slopes show which couplings reach the
quadratic rate and which stay at the linear one.

Example:
    python3 scripts/strong_rates.py --model clark_cameron --draws 20000
"""
import argparse

import numpy as np

from amlpf.models import builtin_model
from amlpf.schemes import (CoupledPair, CoupledTriple, antithetic_triple_unit,
                           euler_pair_unit)
from amlpf.streams import DOMAIN_LEVEL, derive_seed


def fit_slope(levels, errors):
    x = np.asarray(levels, dtype=float)
    y = np.log2(errors)
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def msq(diff):
    return float(np.mean(np.sum(diff**2, axis=-1)))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", default="gbm")
    parser.add_argument("--levels", type=int, nargs=2, default=(3, 8),
                        metavar=("LO", "HI"))
    parser.add_argument("--draws", type=int, default=50000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    ssm = builtin_model(args.model)
    model = ssm.dynamics
    x0 = np.tile(ssm.x0, (args.draws, 1))
    levels = list(range(args.levels[0], args.levels[1] + 1))

    anti, plain, euler = [], [], []
    for l in levels:
        rng = np.random.default_rng(derive_seed(args.seed, DOMAIN_LEVEL, l))
        triple = antithetic_triple_unit(model, l, CoupledTriple.from_common(x0),
                                        rng)
        anti.append(msq(0.5 * (triple.fine + triple.anti) - triple.coarse))
        plain.append(msq(triple.fine - triple.coarse))
        pair = euler_pair_unit(model, l, CoupledPair.from_common(x0), rng)
        euler.append(msq(pair.fine - pair.coarse))

    print(f"model={ssm.name} draws={args.draws}")
    print(f"{'level':>5} {'antithetic':>12} {'fine-coarse':>12} {'euler pair':>12}")
    for i, l in enumerate(levels):
        print(f"{l:>5} {np.log2(anti[i]):>12.3f} {np.log2(plain[i]):>12.3f} "
              f"{np.log2(euler[i]):>12.3f}")
    print(f"slope {fit_slope(levels, anti):>12.3f} "
          f"{fit_slope(levels, plain):>12.3f} {fit_slope(levels, euler):>12.3f}")


if __name__ == "__main__":
    main()
