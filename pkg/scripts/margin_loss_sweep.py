"""Optimal-value loss from the conservative margin, against the kappa/phi bound.

For the queue model and a batch of random Slater-certified models, solves the
LP at kappa = 0 and at the scheduled kappa and prints gap, bound and slack.

    python scripts/margin_loss_sweep.py [--models 50] [--T 100000]
"""
import argparse

from cspda.envs import build_queue_cmdp, random_cmdp
from cspda.lp import slater_margin, solve_cmdp_lp
from cspda.solver import derive_schedule


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--models", type=int, default=50)
    p.add_argument("--T", type=int, default=100_000)
    p.add_argument("--margin", type=float, default=0.1)
    args = p.parse_args()

    queue = build_queue_cmdp()
    cases = [("queue", queue, 0.2, 0.02)]
    for seed in range(args.models):
        m = random_cmdp(4, 3, 2, slater_margin_target=args.margin, seed=seed)
        cases.append((f"random-{seed}", m, slater_margin(m), 0.01))

    worst = float("-inf")
    print(f"{'model':>10} {'phi':>8} {'kappa':>10} {'gap':>10} {'kappa/phi':>10}")
    for name, m, phi, c1 in cases:
        kappa = derive_schedule(m, phi, c1, args.T).kappa
        gap = solve_cmdp_lp(m, 0.0).objective - solve_cmdp_lp(m, kappa).objective
        worst = max(worst, gap - kappa / phi)
        print(f"{name:>10} {phi:8.4f} {kappa:10.3e} {gap:10.3e} {kappa / phi:10.3e}")
    print(f"max (gap - kappa/phi) = {worst:.3e}")


if __name__ == "__main__":
    main()
