"""Finite CMDP model and exact, model-based evaluation.

Occupancy measures and policies are plain ``(num_states, num_actions)``
arrays; :func:`check_occupancy` and :func:`check_policy` enforce their
invariants where a caller needs them.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

INPUT_TOL = 1e-12
DIST_TOL = 1e-9

# canonical on-disk field order
MODEL_FIELDS = (
    "num_states",
    "num_actions",
    "num_constraints",
    "discount",
    "cost_bound",
    "initial_dist",
    "reward",
    "constraint_costs",
    "transition",
)


class ModelError(ValueError):
    """A CMDP model, occupancy measure or policy violates an invariant."""


@dataclass(frozen=True, eq=False)
class CmdpModel:
    """Tabular discounted CMDP ``(S, A, P, r, g, I, gamma, rho)``.

    Array layout: ``transition[a, s, s']``, ``reward[s, a]``,
    ``constraint_costs[i, s, a]``, ``initial_dist[s]``. ``cost_bound`` is the
    declared magnitude bound on the constraint costs (1 in the textbook
    setting, larger for the queue benchmark).
    """

    transition: np.ndarray
    reward: np.ndarray
    constraint_costs: np.ndarray
    discount: float
    initial_dist: np.ndarray
    cost_bound: float = 1.0

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        rho = np.array(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ModelError(f"transition must have shape (A, S, S), got {P.shape}")
        A, S, _ = P.shape
        if S < 1 or A < 1:
            raise ModelError("need at least one state and one action")
        g = np.array(self.constraint_costs, dtype=float)
        if g.size == 0:
            g = g.reshape(0, S, A)
        if r.shape != (S, A):
            raise ModelError(f"reward must have shape {(S, A)}, got {r.shape}")
        if g.ndim != 3 or g.shape[1:] != (S, A):
            raise ModelError(f"constraint_costs must have shape (I, {S}, {A}), got {g.shape}")
        if rho.shape != (S,):
            raise ModelError(f"initial_dist must have shape ({S},), got {rho.shape}")
        if not 0.0 < self.discount < 1.0:
            raise ModelError(f"discount must lie in (0, 1), got {self.discount}")
        if not self.cost_bound > 0:
            raise ModelError(f"cost_bound must be positive, got {self.cost_bound}")

        neg = np.argwhere(P < 0)
        if len(neg):
            a, s, s2 = neg[0]
            raise ModelError(f"transition[{a}, {s}, {s2}] = {P[a, s, s2]} is negative")
        row_err = np.abs(P.sum(axis=2) - 1.0)
        if row_err.max() > INPUT_TOL:
            a, s = np.unravel_index(np.argmax(row_err), row_err.shape)
            raise ModelError(f"transition[{a}, {s}, :] sums to {P[a, s].sum()!r}, not 1")
        if (rho < 0).any():
            s = int(np.argmax(rho < 0))
            raise ModelError(f"initial_dist[{s}] = {rho[s]} is negative")
        if abs(rho.sum() - 1.0) > INPUT_TOL:
            raise ModelError(f"initial_dist sums to {rho.sum()!r}, not 1")
        bad = np.argwhere((r < 0) | (r > 1))
        if len(bad):
            s, a = bad[0]
            raise ModelError(f"reward[{s}, {a}] = {r[s, a]} outside [0, 1]")
        bad = np.argwhere(np.abs(g) > self.cost_bound)
        if len(bad):
            i, s, a = bad[0]
            raise ModelError(
                f"constraint_costs[{i}, {s}, {a}] = {g[i, s, a]} exceeds cost_bound {self.cost_bound}"
            )

        for arr in (P, r, g, rho):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "constraint_costs", g)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "cost_bound", float(self.cost_bound))

    @property
    def num_states(self) -> int:
        return self.transition.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def num_constraints(self) -> int:
        return self.constraint_costs.shape[0]

    @property
    def num_pairs(self) -> int:
        return self.num_states * self.num_actions

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "num_constraints": self.num_constraints,
            "discount": self.discount,
            "cost_bound": self.cost_bound,
            "initial_dist": self.initial_dist.tolist(),
            "reward": self.reward.tolist(),
            "constraint_costs": self.constraint_costs.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CmdpModel":
        missing = [k for k in MODEL_FIELDS if k not in d and k != "cost_bound"]
        if missing:
            raise ModelError(f"model file is missing field(s): {', '.join(missing)}")
        S, A, I = int(d["num_states"]), int(d["num_actions"]), int(d["num_constraints"])
        g = np.array(d["constraint_costs"], dtype=float)
        if I == 0:
            g = g.reshape(0, S, A)
        model = cls(
            transition=d["transition"],
            reward=d["reward"],
            constraint_costs=g,
            discount=d["discount"],
            initial_dist=d["initial_dist"],
            cost_bound=d.get("cost_bound", 1.0),
        )
        declared = (S, A, I)
        actual = (model.num_states, model.num_actions, model.num_constraints)
        if declared != actual:
            raise ModelError(f"declared (S, A, I) = {declared} but arrays give {actual}")
        return model


def save_model(model: CmdpModel, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(model.to_dict(), f, sort_keys=False, default_flow_style=None, width=100)


def load_model(path) -> CmdpModel:
    with open(Path(path)) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ModelError(f"{path}: expected a mapping at top level")
    return CmdpModel.from_dict(data)


def check_occupancy(lam, tol: float = DIST_TOL) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if (lam < 0).any():
        s, a = np.argwhere(lam < 0)[0]
        raise ModelError(f"occupancy measure entry ({s}, {a}) = {lam[s, a]} is negative")
    if abs(lam.sum() - 1.0) > tol:
        raise ModelError(f"occupancy measure sums to {lam.sum()!r}, not 1")
    return lam


def check_policy(pi, tol: float = DIST_TOL) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if (pi < 0).any():
        s, a = np.argwhere(pi < 0)[0]
        raise ModelError(f"policy entry ({s}, {a}) = {pi[s, a]} is negative")
    err = np.abs(pi.sum(axis=1) - 1.0)
    if err.max() > tol:
        s = int(np.argmax(err))
        raise ModelError(f"policy row {s} sums to {pi[s].sum()!r}, not 1")
    return pi


def policy_from_occupancy(lam) -> np.ndarray:
    """Row-normalize an occupancy measure into a stationary policy.

    States with zero visitation get the uniform action distribution.
    """
    lam = np.asarray(lam, dtype=float)
    mass = lam.sum(axis=1, keepdims=True)
    uniform = np.full_like(lam, 1.0 / lam.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(mass > 0, lam / np.where(mass > 0, mass, 1.0), uniform)
    return pi


def state_transition(model: CmdpModel, pi) -> np.ndarray:
    """State-to-state kernel ``P_pi[s, s'] = sum_a pi(a|s) P_a(s, s')``."""
    return np.einsum("sa,ast->st", pi, model.transition)


def occupancy_from_policy(model: CmdpModel, pi) -> np.ndarray:
    """Discounted state-action occupancy measure of ``pi``.

    Solves the state-level flow equations ``d = (1-gamma) rho + gamma P_pi^T d``
    by dense LU and spreads ``d`` over actions; this equals the pair-level
    form computed by :func:`occupancy_from_policy_pairs`.
    """
    pi = check_policy(pi)
    S = model.num_states
    gamma = model.discount
    A_mat = np.eye(S) - gamma * state_transition(model, pi).T
    d = np.linalg.solve(A_mat, (1.0 - gamma) * model.initial_dist)
    lam = d[:, None] * pi
    return np.clip(lam, 0.0, None)


def occupancy_from_policy_pairs(model: CmdpModel, pi) -> np.ndarray:
    """Same map computed on the ``|S||A|``-dimensional pair chain.

    ``lambda = (1-gamma) (I - gamma P_pi^T)^{-1} rho_tilde`` with
    ``P_pi[(s,a),(s',a')] = P_a(s,s') pi(a'|s')`` and
    ``rho_tilde(s,a) = rho(s) pi(a|s)``.
    """
    pi = check_policy(pi)
    S, A = pi.shape
    gamma = model.discount
    P_pairs = np.einsum("ast,tb->satb", model.transition, pi).reshape(S * A, S * A)
    rho_tilde = (model.initial_dist[:, None] * pi).ravel()
    lam = (1.0 - gamma) * np.linalg.solve(np.eye(S * A) - gamma * P_pairs.T, rho_tilde)
    return lam.reshape(S, A)


def flow_violation(model: CmdpModel, lam) -> np.ndarray:
    """Signed flow defect ``sum_a (gamma P_a^T - I) lambda_a + (1-gamma) rho``."""
    lam = np.asarray(lam, dtype=float)
    gamma = model.discount
    inflow = gamma * np.einsum("sa,ast->t", lam, model.transition)
    return inflow - lam.sum(axis=1) + (1.0 - gamma) * model.initial_dist


def flow_residual(model: CmdpModel, lam) -> float:
    return float(np.abs(flow_violation(model, lam)).sum())


@dataclass(frozen=True)
class ValueReport:
    objective: float
    constraint_values: np.ndarray
    flow_residual: float


def evaluate_occupancy(model: CmdpModel, lam) -> ValueReport:
    lam = np.asarray(lam, dtype=float)
    return ValueReport(
        objective=float(np.sum(lam * model.reward)),
        constraint_values=np.einsum("isa,sa->i", model.constraint_costs, lam),
        flow_residual=flow_residual(model, lam),
    )


def evaluate_policy(model: CmdpModel, pi) -> ValueReport:
    """Exact normalized values ``J_r(pi)`` and ``J_g^i(pi)`` under ``rho``."""
    return evaluate_occupancy(model, occupancy_from_policy(model, pi))


@dataclass(frozen=True)
class McEstimate:
    objective: float
    objective_se: float
    constraint_values: np.ndarray
    constraint_se: np.ndarray
    num_rollouts: int


def _sample_rows(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF sampling, one row of ``cdf`` per entry of ``u``
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def mc_value_estimate(model: CmdpModel, pi, num_rollouts: int, rng_seed=None) -> McEstimate:
    """Monte Carlo value estimate from geometric-horizon rollouts.

    Each rollout starts at ``s ~ rho``, runs ``H ~ Geometric(1 - gamma)``
    steps (``H >= 1``) and sums rewards and costs; the mean is multiplied by
    ``(1 - gamma)`` to match the normalized value definition.
    """
    if num_rollouts < 1:
        raise ValueError("num_rollouts must be a positive integer")
    pi = check_policy(pi)
    rng = np.random.default_rng(rng_seed)
    gamma = model.discount
    S, A = pi.shape
    I = model.num_constraints
    pi_cdf = np.cumsum(pi, axis=1)
    P_cdf = np.cumsum(model.transition, axis=2)
    rho_cdf = np.cumsum(model.initial_dist)[None, :]

    n = num_rollouts
    horizon = rng.geometric(1.0 - gamma, size=n)
    state = _sample_rows(np.repeat(rho_cdf, n, axis=0), rng.random(n))
    ret_r = np.zeros(n)
    ret_g = np.zeros((n, I))
    alive = np.arange(n)
    h = 0
    while alive.size:
        s = state[alive]
        a = _sample_rows(pi_cdf[s], rng.random(alive.size))
        ret_r[alive] += model.reward[s, a]
        if I:
            ret_g[alive] += model.constraint_costs[:, s, a].T
        state[alive] = _sample_rows(P_cdf[a, s], rng.random(alive.size))
        h += 1
        alive = alive[horizon[alive] > h]

    scale = 1.0 - gamma
    root_n = np.sqrt(n)
    se_r = scale * ret_r.std(ddof=1) / root_n if n > 1 else float("inf")
    se_g = scale * ret_g.std(axis=0, ddof=1) / root_n if n > 1 else np.full(I, np.inf)
    return McEstimate(
        objective=float(scale * ret_r.mean()),
        objective_se=float(se_r),
        constraint_values=scale * ret_g.mean(axis=0),
        constraint_se=se_g,
        num_rollouts=n,
    )


def mc_occupancy_estimate(model: CmdpModel, pi, num_rollouts: int, rng_seed=None, chunk: int = 50_000):
    """Visit-frequency estimate of the occupancy measure with per-entry standard errors."""
    if num_rollouts < 1:
        raise ValueError("num_rollouts must be a positive integer")
    pi = check_policy(pi)
    rng = np.random.default_rng(rng_seed)
    gamma = model.discount
    S, A = pi.shape
    pi_cdf = np.cumsum(pi, axis=1)
    P_cdf = np.cumsum(model.transition, axis=2)
    rho_cdf = np.cumsum(model.initial_dist)[None, :]

    total = np.zeros(S * A)
    total_sq = np.zeros(S * A)
    done = 0
    while done < num_rollouts:
        n = min(chunk, num_rollouts - done)
        horizon = rng.geometric(1.0 - gamma, size=n)
        state = _sample_rows(np.repeat(rho_cdf, n, axis=0), rng.random(n))
        counts = np.zeros((n, S * A))
        alive = np.arange(n)
        h = 0
        while alive.size:
            s = state[alive]
            a = _sample_rows(pi_cdf[s], rng.random(alive.size))
            counts[alive, s * A + a] += 1
            state[alive] = _sample_rows(P_cdf[a, s], rng.random(alive.size))
            h += 1
            alive = alive[horizon[alive] > h]
        total += counts.sum(axis=0)
        total_sq += (counts**2).sum(axis=0)
        done += n

    n = num_rollouts
    scale = 1.0 - gamma
    mean_count = total / n
    var = (total_sq - n * mean_count**2) / max(n - 1, 1)
    se = scale * np.sqrt(np.maximum(var, 0.0) / n)
    return (scale * mean_count).reshape(S, A), se.reshape(S, A)
