import numpy as np
import pytest

from cspda.envs import random_cmdp
from cspda.lagrangian import (
    DualVars,
    SampleTransition,
    densify,
    exact_grad_lambda,
    exact_gradients,
    exact_lagrangian,
    sampled_lagrangian,
    stoch_grad_lambda,
    stoch_grad_u,
    stoch_grad_v,
    z_value,
)
from cspda.model import CmdpModel, occupancy_from_policy
from cspda.solver import derive_schedule

from conftest import random_policy

N_MC = 10**6


def random_duals(rng, I, S, u_radius, v_radius):
    u = rng.dirichlet(np.ones(I)) * u_radius * rng.random() if I else np.zeros(0)
    return DualVars(u, rng.uniform(-v_radius, v_radius, S))


def draw_batch(model, lam, delta, n, rng):
    """Vectorized draws of (s, a) ~ zeta, s' ~ P, s0 ~ rho."""
    S, A = lam.shape
    zeta = (1 - delta) * lam + delta / lam.size
    k = rng.choice(lam.size, size=n, p=zeta.ravel())
    s, a = np.divmod(k, A)
    cdf = np.cumsum(model.transition[a, s], axis=1)
    s_next = np.minimum((rng.random(n)[:, None] >= cdf).sum(axis=1), S - 1)
    s0 = rng.choice(S, size=n, p=model.initial_dist)
    return SampleTransition.from_model(model, s, a, s_next, s0), zeta[s, a], lam[s, a]


def within_sigmas(samples, target, k=4.0):
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
    return np.all(np.abs(mean - target) <= k * se + 1e-12)


# --- exact Lagrangian -------------------------------------------------------------

def test_single_pair_flow_term_cancels():
    m = CmdpModel(np.ones((1, 1, 1)), [[0.3]], np.zeros((0, 1, 1)), 0.5, [1.0])
    for v in (-4.0, 0.0, 2.5):
        assert exact_lagrangian(m, [[1.0]], DualVars([], [v]), 0.0) == pytest.approx(0.3, abs=1e-15)


def test_zero_duals_give_objective(small_random):
    lam = np.full((3, 2), 1 / 6)
    for kappa in (0.0, 0.3):
        val = exact_lagrangian(small_random, lam, DualVars.zeros(2, 3), kappa)
        assert val == pytest.approx(np.sum(lam * small_random.reward), abs=1e-15)


def test_sampled_lagrangian_mean_is_shifted_lagrangian():
    m = random_cmdp(3, 2, 2, seed=11)
    rng = np.random.default_rng(11)
    lam = rng.dirichlet(np.ones(6)).reshape(3, 2)
    duals = random_duals(rng, 2, 3, 5.0, 3.0)
    M, kappa = 7.0, 0.05
    sample, zeta, lam_sa = draw_batch(m, lam, 0.25, N_MC, rng)
    vals = sampled_lagrangian(sample, zeta, lam_sa, duals, m.discount, M, kappa)
    assert within_sigmas(vals + M, exact_lagrangian(m, lam, duals, kappa))


# --- exact gradients -------------------------------------------------------------

def test_grad_v_vanishes_on_exact_occupancy(small_random):
    lam = occupancy_from_policy(small_random, random_policy(np.random.default_rng(1), 3, 2))
    _, grad_v = exact_gradients(small_random, lam, DualVars.zeros(2, 3), 0.0)
    np.testing.assert_allclose(grad_v, 0.0, atol=1e-15)


def test_grad_u_zero_costs():
    m = random_cmdp(3, 2, 2, seed=2)
    m0 = CmdpModel(m.transition, m.reward, np.zeros_like(m.constraint_costs), m.discount, m.initial_dist)
    grad_u, _ = exact_gradients(m0, np.full((3, 2), 1 / 6), DualVars.zeros(2, 3), 0.0)
    np.testing.assert_array_equal(grad_u, 0.0)


def test_gradients_match_finite_differences():
    m = random_cmdp(4, 3, 2, seed=13)
    rng = np.random.default_rng(13)
    lam = rng.dirichlet(np.ones(12)).reshape(4, 3)
    duals = random_duals(rng, 2, 4, 5.0, 3.0)
    kappa, h = 0.1, 1e-5
    grad_u, grad_v = exact_gradients(m, lam, duals, kappa)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (exact_lagrangian(m, lam, DualVars(duals.u + e, duals.v), kappa)
              - exact_lagrangian(m, lam, DualVars(duals.u - e, duals.v), kappa)) / (2 * h)
        assert fd == pytest.approx(grad_u[i], rel=1e-6, abs=1e-9)
    for s in range(4):
        e = np.zeros(4)
        e[s] = h
        fd = (exact_lagrangian(m, lam, DualVars(duals.u, duals.v + e), kappa)
              - exact_lagrangian(m, lam, DualVars(duals.u, duals.v - e), kappa)) / (2 * h)
        assert fd == pytest.approx(grad_v[s], rel=1e-6, abs=1e-9)
    # the lambda-gradient is the coefficient of the linear form in lambda
    g_lam = exact_grad_lambda(m, duals)
    for k in range(12):
        e = np.zeros(12)
        e[k] = h
        e = e.reshape(4, 3)
        fd = (exact_lagrangian(m, lam + e, duals, kappa) - exact_lagrangian(m, lam - e, duals, kappa)) / (2 * h)
        assert fd == pytest.approx(g_lam.ravel()[k], rel=1e-6, abs=1e-9)


# --- Z and the lambda estimator ---------------------------------------------------------

def test_z_direct_substitution():
    sample = SampleTransition(0, 0, 1, 0, 1.0, np.array([1.0]))
    duals = DualVars([0.5], [1.0, 2.0])
    assert z_value(sample, duals, 0.5) == pytest.approx(1.5)


def test_z_zero_duals_is_reward():
    sample = SampleTransition(2, 1, 0, 1, 0.37, np.array([0.4, -0.9]))
    assert z_value(sample, DualVars.zeros(2, 3), 0.9) == 0.37


def test_z_table_on_queue_recomputed(queue):
    rng = np.random.default_rng(5)
    duals = DualVars([1.5, 2.0], rng.uniform(-3, 3, queue.num_states))
    gamma = queue.discount
    for s in range(queue.num_states):
        for a in range(queue.num_actions):
            for s2 in range(queue.num_states):
                sample = SampleTransition.from_model(queue, s, a, s2, 0)
                # independent recomputation from the raw benchmark formulas
                svc = (0.2, 0.4, 0.6, 0.8)[a // 4]
                flow = (0.4, 0.5, 0.6, 0.7)[a % 4]
                r = (5 - s) / 5
                g1, g2 = 3 - 10 * svc, 1.2 - 8 * (1 - flow) ** 2
                want = r + gamma * duals.v[s2] - duals.v[s] + 1.5 * g1 + 2.0 * g2
                assert z_value(sample, duals, gamma) == pytest.approx(want, abs=1e-12)


def test_lambda_estimator_examples():
    sample = SampleTransition(0, 0, 0, 0, 0.5, np.array([]))
    duals = DualVars([], [0.0])
    assert stoch_grad_lambda(sample, 0.3, duals, 0.5, 0.5) == 0.0
    assert stoch_grad_lambda(sample, 0.5, duals, 0.5, 1.5) == pytest.approx(-2.0)


@pytest.mark.parametrize("fn, args", [
    (stoch_grad_lambda, (DualVars([], [0.0]), 0.5, 1.0)),
    (stoch_grad_u, (0.2, 0.0)),
    (stoch_grad_v, (0.2, 0.5)),
    (sampled_lagrangian, (0.2, DualVars([], [0.0]), 0.5, 1.0, 0.0)),
])
@pytest.mark.parametrize("zeta", [0.0, -0.1])
def test_nonpositive_zeta_rejected(fn, args, zeta):
    sample = SampleTransition(0, 0, 0, 0, 0.5, np.array([]))
    with pytest.raises(ValueError):
        fn(sample, zeta, *args)


@pytest.mark.parametrize("seed", [0, 1])
def test_lambda_estimator_sign_with_scheduled_shift(queue, seed):
    m = queue if seed == 0 else random_cmdp(5, 4, 3, seed=19)
    cfg = derive_schedule(m, 0.2, 0.02, 10**5)
    rng = np.random.default_rng(seed)
    I, S = m.num_constraints, m.num_states
    n = N_MC
    # duals spread over U x V, including its corners
    u = rng.dirichlet(np.ones(I), size=n) * cfg.u_radius * rng.random((n, 1)) ** 0.25
    v = rng.uniform(-cfg.v_radius, cfg.v_radius, size=(n, S))
    v[: n // 4] = np.sign(v[: n // 4]) * cfg.v_radius
    s = rng.integers(S, size=n)
    a = rng.integers(m.num_actions, size=n)
    s2 = rng.integers(S, size=n)
    z = (m.reward[s, a] + m.discount * v[np.arange(n), s2] - v[np.arange(n), s]
         + np.einsum("ni,in->n", u, m.constraint_costs[:, s, a]))
    zeta = rng.uniform(0.25 / m.num_pairs, 1.0, size=n)
    # the estimator itself on a slice, the vectorized formula on all
    for j in range(0, n, n // 100):
        d = DualVars(u[j], v[j])
        sample = SampleTransition.from_model(m, s[j], a[j], s2[j], 0)
        assert stoch_grad_lambda(sample, zeta[j], d, m.discount, cfg.M) == pytest.approx((z[j] - cfg.M) / zeta[j])
    assert ((z - cfg.M) / zeta).max() <= 0.0


# --- dual estimators ---------------------------------------------------------------

def test_u_estimator_examples():
    zero = SampleTransition(0, 0, 0, 0, 0.5, np.zeros(2))
    np.testing.assert_array_equal(stoch_grad_u(zero, 0.3, 0.2, 0.0), 0.0)
    sample = SampleTransition(0, 0, 0, 0, 0.5, np.array([1.0, -1.0]))
    np.testing.assert_allclose(stoch_grad_u(sample, 0.4, 0.4, 0.1), [0.9, -1.1])


def test_u_estimator_mean():
    m = random_cmdp(3, 2, 2, seed=17)
    rng = np.random.default_rng(17)
    lam = rng.dirichlet(np.ones(6)).reshape(3, 2)
    kappa = 0.05
    sample, zeta, lam_sa = draw_batch(m, lam, 0.25, N_MC, rng)
    grads = stoch_grad_u(sample, zeta, lam_sa, kappa)
    assert within_sigmas(grads, exact_gradients(m, lam, DualVars.zeros(2, 3), kappa)[0])


def test_v_estimator_self_loop_cancels():
    idx, vals = stoch_grad_v(SampleTransition(1, 0, 1, 1, 0.0, np.array([])), 0.3, 0.3, 0.5)
    assert list(idx) == [1] and vals[0] == pytest.approx(0.0, abs=1e-15)


def test_v_estimator_distinct_indices():
    idx, vals = stoch_grad_v(SampleTransition(2, 0, 1, 0, 0.0, np.array([])), 0.3, 0.3, 0.5)
    assert dict(zip(idx.tolist(), vals.tolist())) == pytest.approx({0: 0.5, 1: 0.5, 2: -1.0})


def test_v_estimator_mean():
    m = random_cmdp(3, 2, 1, seed=21)
    rng = np.random.default_rng(21)
    lam = rng.dirichlet(np.ones(6)).reshape(3, 2)
    n = N_MC
    sample, zeta, lam_sa = draw_batch(m, lam, 0.25, n, rng)
    grads = np.empty((n, 3))
    for j in range(n):
        one = SampleTransition(sample.s[j], sample.a[j], sample.s_next[j], sample.s0[j], 0.0, np.empty(0))
        idx, vals = stoch_grad_v(one, zeta[j], lam_sa[j], m.discount)
        grads[j] = densify(idx, vals, 3)
    assert within_sigmas(grads, exact_gradients(m, lam, DualVars.zeros(1, 3), 0.0)[1])


def test_sampled_lagrangian_examples():
    sample = SampleTransition(0, 1, 0, 0, 0.6, np.array([0.5]))
    zero = DualVars([0.0], [0.0])
    assert sampled_lagrangian(sample, 0.3, 0.2, zero, 0.5, 0.0, 0.1) == pytest.approx(0.2 * 0.6 / 0.3)
    # Z = M, v = 0, kappa = 0
    duals = DualVars([1.0], [0.0])
    assert sampled_lagrangian(sample, 0.3, 0.2, duals, 0.5, 1.1, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_dual_vars_check():
    DualVars([1.0, 1.0], [2.0]).check(2.0, 2.0)
    with pytest.raises(ValueError):
        DualVars([-0.1], [0.0]).check(2.0, 2.0)
    with pytest.raises(ValueError):
        DualVars([1.5, 1.0], [0.0]).check(2.0, 2.0)
    with pytest.raises(ValueError):
        DualVars([0.0], [2.5]).check(2.0, 2.0)
