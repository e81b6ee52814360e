import numpy as np
import pytest
from scipy.stats import chisquare

from cspda.envs import (
    GenerationError,
    QueueParams,
    TabularGenerativeModel,
    build_queue_cmdp,
    queue_transition,
    random_cmdp,
)
from cspda.lp import slater_margin


def test_interior_row():
    p = queue_transition(3, 0.6, 0.4, 5)
    np.testing.assert_allclose(p[2:5], [0.36, 0.48, 0.16])
    assert p.sum() == pytest.approx(1.0, abs=1e-15)


def test_full_buffer_row():
    p = queue_transition(5, 0.8, 0.5, 5)
    np.testing.assert_allclose(p, [0, 0, 0, 0, 0.8, 0.2])


def test_empty_queue_without_arrivals_stays():
    np.testing.assert_array_equal(queue_transition(0, 0.4, 0.0, 5), [1, 0, 0, 0, 0, 0])


def test_rows_sum_to_one():
    for x in range(6):
        for a in (0.2, 0.4, 0.6, 0.8):
            for b in (0.0, 0.4, 0.5, 0.6, 0.7):
                assert abs(queue_transition(x, a, b, 5).sum() - 1.0) <= 1e-15


def test_state_out_of_range():
    with pytest.raises(ValueError):
        queue_transition(6, 0.5, 0.5, 5)


def test_benchmark_dimensions(queue):
    assert (queue.num_states, queue.num_actions, queue.num_constraints) == (6, 16, 2)
    np.testing.assert_allclose(queue.initial_dist, 1 / 6)
    assert queue.discount == 0.5


def test_service_costs(queue):
    # action index 0 is (a=0.2, b=0.4); index 12 is (a=0.8, b=0.4)
    assert queue.constraint_costs[0, 0, 0] == pytest.approx(1.0)
    assert queue.constraint_costs[0, 0, 12] == pytest.approx(-5.0)
    assert queue.cost_bound >= 5.0


def test_model_rows_match_table():
    params = QueueParams()
    m = build_queue_cmdp(params)
    for k, (a, b) in enumerate(params.action_pairs()):
        for x in range(6):
            np.testing.assert_array_equal(m.transition[k, x], queue_transition(x, a, b, 5))


def test_reward_rescaling():
    params = QueueParams()
    m = build_queue_cmdp(params)
    np.testing.assert_allclose(m.reward[:, 0], (5 - np.arange(6)) / 5)
    assert params.raw_objective(0.4) == pytest.approx(2.0)


@pytest.mark.parametrize("kw", [dict(service_levels=(0.0, 0.5)), dict(service_levels=(0.5, 1.0)),
                                dict(flow_levels=(-0.1, 0.5)), dict(flow_levels=(0.5, 1.0)),
                                dict(buffer_size=0)])
def test_queue_params_validation(kw):
    with pytest.raises(ValueError):
        QueueParams(**kw)


def test_random_model_is_deterministic():
    a, b = random_cmdp(4, 3, 2, 0.05, seed=5), random_cmdp(4, 3, 2, 0.05, seed=5)
    for name in ("transition", "reward", "constraint_costs", "initial_dist"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_random_model_without_constraints():
    m = random_cmdp(3, 2, 0, slater_margin_target=5.0, seed=1)
    assert m.num_constraints == 0


def test_random_model_certified_margin():
    m = random_cmdp(4, 3, 1, slater_margin_target=0.05, seed=23)
    assert slater_margin(m) >= 0.05


def test_unreachable_margin_raises():
    with pytest.raises(GenerationError):
        random_cmdp(3, 2, 1, slater_margin_target=1.5, seed=0, max_retries=5)


def chi2_ok(counts, probs, n):
    support = probs > 0
    assert counts[~support].sum() == 0
    if support.sum() < 2:
        return True
    return chisquare(counts[support], n * probs[support]).pvalue > 1e-4


def test_sample_next_matches_transition_rows():
    m = random_cmdp(3, 2, 1, seed=3)
    env = TabularGenerativeModel(m)
    rng = np.random.default_rng(0)
    n = 10**5
    for s in range(3):
        for a in range(2):
            counts = np.bincount([env.sample_next(s, a, rng) for _ in range(n)], minlength=3)
            assert chi2_ok(counts, m.transition[a, s], n)


def test_queue_sampler_cdf_matches_rows(queue):
    env = TabularGenerativeModel(queue)
    rng = np.random.default_rng(1)
    n = 10**5
    for s in range(6):
        for a in range(16):
            u = rng.random(n)
            # same inversion as sample_next, vectorized
            draws = np.minimum(np.searchsorted(env.transition_cdf[s, a], u, side="right"), 5)
            assert chi2_ok(np.bincount(draws, minlength=6), queue.transition[a, s], n)


def test_initial_sample_and_accessors(queue):
    env = TabularGenerativeModel(queue)
    rng = np.random.default_rng(2)
    counts = np.bincount([env.initial_sample(rng) for _ in range(60_000)], minlength=6)
    assert chi2_ok(counts, queue.initial_dist, 60_000)
    assert env.reward(1, 3) == queue.reward[1, 3]
    assert env.cost(1, 2, 3) == queue.constraint_costs[1, 2, 3]
