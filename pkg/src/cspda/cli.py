"""Command-line driver: ``cspda run | oracle | queue-model | plot``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .envs import QueueParams, build_queue_cmdp
from .harness import KAPPA_MODES, FULL_SWEEP_SEEDS, load_spec, plot_aggregates, run_experiment, write_csv
from .lp import LpStatus, slater_margin, solve_cmdp_lp
from .model import load_model, save_model


def _kappa_modes(text: str) -> tuple:
    modes = ("auto", "zero") if text == "both" else tuple(m.strip() for m in text.split(","))
    bad = [m for m in modes if m not in KAPPA_MODES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown kappa mode(s) {bad}; choose from {KAPPA_MODES} or 'both'")
    return modes


def cmd_run(args) -> int:
    seeds = FULL_SWEEP_SEEDS if args.full_sweep else args.seeds
    spec = load_spec(
        args.spec, num_seeds=seeds, T=args.T, kappa_modes=args.kappa_mode, kappa=args.kappa,
        out_dir=args.out_dir, stride=args.stride, workers=args.workers,
        plots=False if args.no_plots else None,
    )
    result = run_experiment(spec)
    s = result.summary
    print(f"LP optimum {s['lp_optimum']:.6f}" + (f" (raw {s['raw_lp_optimum']:.4f})" if "raw_lp_optimum" in s else ""))
    for mode, entry in s["modes"].items():
        line = f"[{mode}] kappa={entry['kappa']:.4g} seeds={entry['seeds_ok']}"
        if "final" in entry:
            f = entry["final"]
            line += f" J_r={f['J_r_mean']:.5f}"
            line += "".join(f" {k[:-5]}={v:.5f}" for k, v in f.items() if k.startswith("J_g") and k.endswith("_mean"))
            if "raw_J_r_mean" in entry:
                line += f" raw_J_r={entry['raw_J_r_mean']:.4f}"
        if entry["failed"]:
            line += f" failed={len(entry['failed'])}"
        print(line)
    print(f"outputs in {result.out_dir}")
    return 0


def cmd_oracle(args) -> int:
    model = load_model(args.model)
    sol = solve_cmdp_lp(model, args.kappa)
    print(f"status {sol.status.value}")
    if sol.status is not LpStatus.OPTIMAL:
        return 1
    print(f"objective {sol.objective:.12g}")
    if model.num_constraints:
        print(f"slater_margin {slater_margin(model):.12g}")
        print("u " + " ".join(f"{x:.6g}" for x in sol.dual_u))
    print("v " + " ".join(f"{x:.6g}" for x in sol.dual_v))
    if args.csv:
        S, A = model.num_states, model.num_actions
        rows = [(s, a, sol.lambda_star[s, a]) for s in range(S) for a in range(A)]
        write_csv(args.csv, ["state", "action", "lambda"], rows)
        print(f"wrote {args.csv}")
    return 0


def cmd_queue_model(args) -> int:
    model = build_queue_cmdp(QueueParams())
    save_model(model, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_plot(args) -> int:
    out = Path(args.out_dir)
    modes = [m for m in KAPPA_MODES if (out / m / "aggregate.csv").is_file()]
    if not modes:
        print(f"no aggregate CSVs under {out}", file=sys.stderr)
        return 1
    for p in plot_aggregates(out, modes):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cspda", description="Primal-dual CMDP solver experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a seeded experiment from a YAML spec")
    p.add_argument("spec")
    p.add_argument("--seeds", type=int, default=None, help="number of seeds (spec default 50)")
    p.add_argument("--full-sweep", action="store_true", help=f"use {FULL_SWEEP_SEEDS} seeds")
    p.add_argument("--T", type=int, default=None, help="iterations per run")
    p.add_argument("--kappa-mode", type=_kappa_modes, default=None, help="auto, zero, explicit, comma list or 'both'")
    p.add_argument("--kappa", type=float, default=None, help="margin for kappa mode 'explicit'")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--stride", type=int, default=None, help="log stride (default T/500)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="solve the LP for a model file")
    p.add_argument("model")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--csv", default=None, help="write the optimal occupancy measure here")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("queue-model", help="write the queue benchmark model file")
    p.add_argument("--out", default="queue_model.yaml")
    p.set_defaults(func=cmd_queue_model)

    p = sub.add_parser("plot", help="regenerate SVGs from aggregate CSVs")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    np.set_printoptions(precision=6)
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
