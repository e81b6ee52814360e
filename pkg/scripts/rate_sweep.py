"""Duality-gap proxy against the horizon T on a small random model.

Prints the seed-averaged gap at each T and the ratio between successive
horizons (sqrt(10) ~ 3.16 for an exact 1/sqrt(T) decay).

    python scripts/rate_sweep.py [--model-seed 0] [--seeds 20] [--Ts 1000 10000 100000]
"""
import argparse

from cspda.envs import random_cmdp
from cspda.harness import duality_gap_sweep
from cspda.lp import slater_margin


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--shape", type=int, nargs=3, default=(4, 3, 2), metavar=("S", "A", "I"))
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--c1", type=float, default=0.01)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--Ts", type=int, nargs="+", default=[10**3, 10**4, 10**5])
    args = p.parse_args()

    model = random_cmdp(*args.shape, slater_margin_target=args.margin, seed=args.model_seed)
    phi = slater_margin(model)
    print(f"model seed {args.model_seed}, shape {tuple(args.shape)}, Slater margin {phi:.4f}")
    prev = None
    for pt in duality_gap_sweep(model, phi, args.c1, args.Ts, num_seeds=args.seeds):
        ratio = "" if prev is None else f"  ratio {prev / pt.mean_gap:.3f}"
        print(f"T={pt.T:>9}  kappa={pt.kappa:.3e}  gap={pt.mean_gap:.5f} +- {pt.std_err:.5f}{ratio}")
        prev = pt.mean_gap


if __name__ == "__main__":
    main()
