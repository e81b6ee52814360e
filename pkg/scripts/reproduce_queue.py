"""Queue benchmark: conservative vs plain runs, per-seed CSVs, aggregates and plots.

    python scripts/reproduce_queue.py [--seeds 50] [--workers N] [--out results/queue]
"""
import argparse
from pathlib import Path

from cspda.harness import default_workers, load_spec, run_experiment

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "queue_benchmark.yaml"


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--out", default=None)
    args = p.parse_args()

    spec = load_spec(CONFIG, num_seeds=args.seeds, T=args.T, workers=args.workers, out_dir=args.out)
    s = run_experiment(spec).summary
    print(f"LP optimum {s['lp_optimum']:.6f} (raw {s['raw_lp_optimum']:.4f})")
    for mode, entry in s["modes"].items():
        f = entry["final"]
        print(f"{mode:>5}: kappa={entry['kappa']:.3e} J_r={f['J_r_mean']:.4f} (raw {entry['raw_J_r_mean']:.4f}) "
              f"J_g1={f['J_g1_mean']:.4f}+-{f['J_g1_std']:.4f} J_g2={f['J_g2_mean']:.4f}+-{f['J_g2_std']:.4f}")
    print(f"outputs in {spec.out_dir}")


if __name__ == "__main__":
    main()
