"""Generative models: the single-server queue benchmark and random CMDPs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .model import CmdpModel


class GenerativeModel(Protocol):
    num_states: int
    num_actions: int
    num_constraints: int

    def sample_next(self, s: int, a: int, rng: np.random.Generator) -> int: ...

    def reward(self, s: int, a: int) -> float: ...

    def cost(self, i: int, s: int, a: int) -> float: ...

    def initial_sample(self, rng: np.random.Generator) -> int: ...


class TabularGenerativeModel:
    """Generative model backed by a known :class:`CmdpModel`.

    ``sample_next`` consumes exactly one ``rng.random()`` draw and inverts
    the cumulative transition row, so a block of pre-drawn uniforms gives
    the same trajectory.
    """

    def __init__(self, model: CmdpModel):
        self.model = model
        self.num_states = model.num_states
        self.num_actions = model.num_actions
        self.num_constraints = model.num_constraints
        # cdf[s, a, s']
        self.transition_cdf = np.cumsum(np.transpose(model.transition, (1, 0, 2)), axis=2)
        self.initial_cdf = np.cumsum(model.initial_dist)

    def sample_next(self, s: int, a: int, rng: np.random.Generator) -> int:
        return invert_cdf(self.transition_cdf[s, a], rng.random())

    def reward(self, s: int, a: int) -> float:
        return float(self.model.reward[s, a])

    def cost(self, i: int, s: int, a: int) -> float:
        return float(self.model.constraint_costs[i, s, a])

    def initial_sample(self, rng: np.random.Generator) -> int:
        return invert_cdf(self.initial_cdf, rng.random())


def invert_cdf(cdf: np.ndarray, u: float) -> int:
    # first index with u < cdf; clamp guards a final cdf entry a hair below 1
    return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)


@dataclass(frozen=True)
class QueueParams:
    """Discrete-time single-server queue with a finite buffer.

    Defaults are the benchmark settings: buffer 5, service levels
    {0.2, 0.4, 0.6, 0.8}, arrival levels {0.4, 0.5, 0.6, 0.7},
    ``gamma = 0.5``, cost ``c(s) = 5 - s``, service constraint
    ``c1 = 3 - 10 a`` and flow constraint ``c2 = 1.2 - 8 (1 - b)^2``.
    """

    buffer_size: int = 5
    service_levels: tuple = (0.2, 0.4, 0.6, 0.8)
    flow_levels: tuple = (0.4, 0.5, 0.6, 0.7)
    gamma: float = 0.5
    # c(s) = reward_offset + reward_slope * s
    reward_offset: float = 5.0
    reward_slope: float = -1.0
    # c1(a) = service_offset + service_slope * a
    service_offset: float = 3.0
    service_slope: float = -10.0
    # c2(b) = flow_offset + flow_coef * (1 - b)^2
    flow_offset: float = 1.2
    flow_coef: float = -8.0

    def __post_init__(self):
        A, B = self.service_levels, self.flow_levels
        if self.buffer_size < 1:
            raise ValueError("buffer_size must be at least 1")
        if not (0 < min(A) <= max(A) < 1):
            raise ValueError(f"service levels must lie in (0, 1): {A}")
        if not (0 <= min(B) <= max(B) < 1):
            raise ValueError(f"flow levels must lie in [0, 1): {B}")

    @property
    def num_states(self) -> int:
        return self.buffer_size + 1

    def action_pairs(self) -> list[tuple[float, float]]:
        """Joint actions ``(a, b)``; index ``i * |B| + j`` holds ``(A[i], B[j])``."""
        return [(a, b) for a in self.service_levels for b in self.flow_levels]

    def raw_cost(self, s) -> np.ndarray:
        return self.reward_offset + self.reward_slope * np.asarray(s, dtype=float)

    def reward_scale(self) -> tuple[float, float]:
        """``(low, span)`` with ``r = (c - low) / span`` mapping raw costs onto [0, 1]."""
        c = self.raw_cost(np.arange(self.num_states))
        low, high = float(c.min()), float(c.max())
        return low, (high - low) if high > low else 1.0

    def raw_objective(self, normalized: float) -> float:
        """Raw-cost value of a normalized objective (exact since occupancy sums to 1)."""
        low, span = self.reward_scale()
        return low + span * normalized


def queue_transition(x: int, a: float, b: float, L: int) -> np.ndarray:
    """Next-state distribution over ``{0, ..., L}`` from state ``x``."""
    if not 0 <= x <= L:
        raise ValueError(f"state {x} outside [0, {L}]")
    p = np.zeros(L + 1)
    if x == L:
        # no arrivals into a full buffer
        p[L - 1] = a
        p[L] = 1.0 - a
    elif x == 0:
        p[0] = 1.0 - b * (1.0 - a)
        p[1] = b * (1.0 - a)
    else:
        p[x - 1] = a * (1.0 - b)
        p[x] = a * b + (1.0 - a) * (1.0 - b)
        p[x + 1] = (1.0 - a) * b
    return p


def build_queue_cmdp(params: QueueParams | None = None) -> CmdpModel:
    params = params or QueueParams()
    L = params.buffer_size
    S = params.num_states
    pairs = params.action_pairs()
    A = len(pairs)
    P = np.empty((A, S, S))
    for k, (a, b) in enumerate(pairs):
        for x in range(S):
            P[k, x] = queue_transition(x, a, b, L)

    low, span = params.reward_scale()
    r = (params.raw_cost(np.arange(S)) - low) / span
    reward = np.repeat(r[:, None], A, axis=1)
    a_col = np.array([a for a, _ in pairs])
    b_col = np.array([b for _, b in pairs])
    c1 = params.service_offset + params.service_slope * a_col
    c2 = params.flow_offset + params.flow_coef * (1.0 - b_col) ** 2
    costs = np.stack([np.tile(c1, (S, 1)), np.tile(c2, (S, 1))])
    bound = float(max(np.abs(c1).max(), np.abs(c2).max()))
    return CmdpModel(
        transition=P,
        reward=reward,
        constraint_costs=costs,
        discount=params.gamma,
        initial_dist=np.full(S, 1.0 / S),
        cost_bound=bound,
    )


class GenerationError(RuntimeError):
    pass


def random_cmdp(
    num_states: int,
    num_actions: int,
    num_constraints: int,
    slater_margin_target: float = 0.0,
    seed: int = 0,
    discount: float = 0.5,
    max_retries: int = 200,
) -> CmdpModel:
    """Seeded random CMDP whose LP-certified Slater margin meets a target.

    Transition rows and the initial distribution are Dirichlet(1) draws,
    rewards uniform on [0, 1], constraint costs uniform on [-1, 1]; cost
    tables are redrawn until the margin reaches ``slater_margin_target``.
    """
    if min(num_states, num_actions) < 1 or num_constraints < 0:
        raise ValueError("dimensions must be positive")
    from .lp import slater_margin

    rng = np.random.default_rng(seed)
    S, A, I = num_states, num_actions, num_constraints
    P = rng.dirichlet(np.ones(S), size=(A, S))
    # renormalize so rows sum to 1 to the last bit the validator checks
    P /= P.sum(axis=2, keepdims=True)
    rho = rng.dirichlet(np.ones(S))
    rho /= rho.sum()
    r = rng.random((S, A))
    for _ in range(max_retries):
        g = rng.uniform(-1.0, 1.0, size=(I, S, A))
        model = CmdpModel(P, r, g, discount, rho)
        if I == 0 or slater_margin(model) >= slater_margin_target:
            return model
    raise GenerationError(
        f"no cost tables with Slater margin >= {slater_margin_target} after {max_retries} draws"
    )
