"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the status lines bypass
output capture), or directly with ``python tests/test_acceptance.py``.
"""
import itertools
import sys
import warnings

import numpy as np
import pytest

from cspda.envs import build_queue_cmdp, random_cmdp
from cspda.harness import ExperimentSpec, duality_gap_sweep, run_experiment
from cspda.lagrangian import (
    DualVars,
    SampleTransition,
    densify,
    exact_grad_lambda,
    exact_gradients,
    stoch_grad_lambda,
    stoch_grad_u,
    stoch_grad_v,
)
from cspda.lp import LpStatus, dual_norm_bounds, slater_margin, solve_cmdp_lp
from cspda.solver import derive_schedule, run

QUEUE_PHI, QUEUE_C1, QUEUE_T = 0.2, 0.02, 100_000
NUM_SEEDS = 50
RANDOM_SHAPE = (4, 3, 2)


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def certified_models(count, target=0.1, c1=0.01, T=QUEUE_T):
    """Seeded random models with their LP Slater margin and scheduled kappa."""
    out = []
    for seed in range(count):
        m = random_cmdp(*RANDOM_SHAPE, slater_margin_target=target, seed=seed)
        phi = slater_margin(m)
        out.append((m, phi, derive_schedule(m, phi, c1, T).kappa))
    return out


@pytest.fixture(scope="module")
def queue_runs(tmp_path_factory):
    spec = ExperimentSpec(environment="queue", T=QUEUE_T, phi=QUEUE_PHI, c_tilde1=QUEUE_C1,
                          kappa_modes=("auto", "zero"), schedule_cost_bound=1.0, num_seeds=NUM_SEEDS,
                          out_dir=str(tmp_path_factory.mktemp("queue")), plots=False)
    return run_experiment(spec)


def test_criterion_1_zero_violation(queue_runs, capsys):
    entry = queue_runs.summary["modes"]["auto"]
    final = entry["final"]
    g = (final["J_g1_mean"], final["J_g2_mean"])
    ok = entry["seeds_ok"] >= NUM_SEEDS and min(g) >= 0
    report(capsys, 1, ok, f"kappa={entry['kappa']:.3e}, seeds={entry['seeds_ok']}, "
                          f"mean J_g1={g[0]:.4f}, J_g2={g[1]:.4f} (need >= 0)")


def test_criterion_2_conservative_vs_plain(queue_runs, capsys):
    modes = queue_runs.summary["modes"]
    cons, plain = modes["auto"]["final"]["J_r_mean"], modes["zero"]["final"]["J_r_mean"]
    rel = abs(cons - plain) / abs(plain)
    report(capsys, 2, rel <= 0.05, f"mean J_r kappa>0 = {cons:.4f}, kappa=0 = {plain:.4f}, relative diff {rel:.3%}")


def test_criterion_3_conservative_gap(capsys):
    queue = build_queue_cmdp()
    cases = [(queue, QUEUE_PHI, derive_schedule(queue, QUEUE_PHI, QUEUE_C1, QUEUE_T).kappa)]
    cases += certified_models(50)
    worst = -np.inf
    for m, phi, kappa in cases:
        base, tight = solve_cmdp_lp(m, 0.0), solve_cmdp_lp(m, kappa)
        assert base.status is LpStatus.OPTIMAL and tight.status is LpStatus.OPTIMAL
        worst = max(worst, (base.objective - tight.objective) - kappa / phi)
    report(capsys, 3, worst <= 1e-8, f"{len(cases)} models, max (gap - kappa/phi) = {worst:.3e} (need <= 1e-8)")


def test_criterion_4_rate_shape(capsys):
    m = random_cmdp(*RANDOM_SHAPE, slater_margin_target=0.1, seed=0)
    phi = slater_margin(m)
    points = duality_gap_sweep(m, phi, 0.01, [10**3, 10**4, 10**5], num_seeds=20)
    gaps = [p.mean_gap for p in points]
    ratios = [a / b for a, b in zip(gaps, gaps[1:])]
    ok = all(2.0 <= r <= 5.0 for r in ratios)
    report(capsys, 4, ok, "gaps " + ", ".join(f"{g:.4g}" for g in gaps)
           + "; ratios " + ", ".join(f"{r:.3f}" for r in ratios) + " (need in [2, 5])")


def enumeration_error(m, rng, delta=0.25, M=7.0, kappa=0.05):
    """Max deviation of the enumerated estimator means from the exact gradients."""
    S, A, I, gamma = m.num_states, m.num_actions, m.num_constraints, m.discount
    lam = rng.dirichlet(np.ones(S * A)).reshape(S, A)
    zeta = (1 - delta) * lam + delta / (S * A)
    duals = DualVars(rng.uniform(0, 1, I), rng.uniform(-2, 2, S))
    e_lam, e_u, e_v = np.zeros((S, A)), np.zeros(I), np.zeros(S)
    for s, a, s1, s0 in itertools.product(range(S), range(A), range(S), range(S)):
        w = zeta[s, a] * m.transition[a, s, s1] * m.initial_dist[s0]
        if w == 0:
            continue
        smp = SampleTransition.from_model(m, s, a, s1, s0)
        e_lam[s, a] += w * stoch_grad_lambda(smp, zeta[s, a], duals, gamma, M)
        e_u += w * stoch_grad_u(smp, zeta[s, a], lam[s, a], kappa)
        e_v += w * densify(*stoch_grad_v(smp, zeta[s, a], lam[s, a], gamma), S)
    grad_u, grad_v = exact_gradients(m, lam, duals, kappa)
    return max(np.abs(e_lam - (exact_grad_lambda(m, duals) - M)).max(),
               np.abs(e_u - grad_u).max(), np.abs(e_v - grad_v).max())


def test_criterion_5_unbiasedness(capsys):
    rng = np.random.default_rng(0)
    shapes = [(1, 2, 1), (2, 2, 1), (3, 2, 2), (4, 3, 2), (5, 4, 3), (8, 8, 2)]
    worst = max(enumeration_error(random_cmdp(S, A, I, seed=k), rng) for k, (S, A, I) in enumerate(shapes))
    report(capsys, 5, worst <= 1e-12, f"{len(shapes)} models up to |S||A|=64, max deviation {worst:.2e} (need <= 1e-12)")


def prox_objective(x, lam, grad, beta):
    """beta <grad, x> - KL(x || lam) on rows of x (0 log 0 = 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(x > 0, x * np.log(x / lam), 0.0).sum(axis=-1)
    return beta * x @ grad - kl


def zoom_argmax(lam, grad, beta, levels=12, points=81):
    """Grid-search maximizer over the 2-simplex, refining the window around the best point."""
    center, half = np.array([1 / 3, 1 / 3]), 1.0
    for _ in range(levels):
        axes = [np.clip(np.linspace(c - half, c + half, points), 0, 1) for c in center]
        xy = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
        xy = xy[xy.sum(axis=1) <= 1]
        x = np.column_stack([xy, 1 - xy.sum(axis=1)])
        center = xy[np.argmax(prox_objective(x, lam, grad, beta))]
        half *= 4 / (points - 1)
    return np.append(center, 1 - center.sum())


def test_criterion_6_mirror_step(capsys):
    from cspda.solver import mirror_step

    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        lam = rng.dirichlet(np.ones(3))
        at, entry, beta = rng.integers(3), -rng.uniform(0, 5), rng.uniform(0.05, 2.0)
        grad = np.zeros(3)
        grad[at] = entry
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            closed = mirror_step(lam, entry, at, beta)
        worst = max(worst, np.abs(closed - zoom_argmax(lam, grad, beta)).max())
    report(capsys, 6, worst <= 1e-4, f"100 instances, max |closed form - grid argmax| = {worst:.2e} (need <= 1e-4)")


def test_criterion_7_dual_bounds(capsys):
    worst_u = worst_v = -np.inf
    for m, phi, kappa in certified_models(50):
        u_bound, v_bound = dual_norm_bounds(m, phi)
        for k in (0.0, kappa):
            sol = solve_cmdp_lp(m, k)
            worst_u = max(worst_u, sol.dual_u.sum() - u_bound)
            worst_v = max(worst_v, np.abs(sol.dual_v).max() - v_bound)
    oracle_ok = worst_u <= 1e-9 and worst_v <= 1e-9

    # full runs, every iterate logged and checked against U x V
    runs = [(build_queue_cmdp(), QUEUE_PHI, QUEUE_C1, 1.0)]
    runs += [(m, phi, 0.01, None) for m, phi, _ in certified_models(3)]
    excess = -np.inf
    for m, phi, c1, G in runs:
        cfg = derive_schedule(m, phi, c1, 20_000, G, log_every=1)
        log = run(m, None, cfg).log
        assert len(log) == cfg.T
        excess = max(excess, log.u.sum(axis=1).max() - cfg.u_radius, -log.u.min(),
                     np.abs(log.v).max() - cfg.v_radius)
    ok = oracle_ok and excess <= 1e-9
    report(capsys, 7, ok, f"oracle duals: max excess ||u||_1 {worst_u:.3e}, ||v||_inf {worst_v:.3e}; "
                          f"{len(runs)} full runs x 20000 iterates, max excess over U x V {excess:.3e}")


def test_criterion_8_policy_occupancy_properties(capsys):
    from test_model import test_exact_occupancy_is_valid_and_flow_consistent, test_round_trip_policy_occupancy_policy

    failures = []
    for prop in (test_round_trip_policy_occupancy_policy, test_exact_occupancy_is_valid_and_flow_consistent):
        try:
            prop()
        except AssertionError as exc:  # hypothesis re-raises the shrunk counterexample
            failures.append(f"{prop.__name__}: {exc}")
    report(capsys, 8, not failures, "round trip and flow residual, 1000 cases each"
           + ("" if not failures else "; " + "; ".join(failures)))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
