"""Conservative Lagrangian, its exact dual gradients and one-sample estimators.

The Lagrangian of the kappa-tightened occupancy LP is

    L(lam, u, v) = <lam, r> + <u, G^T lam - kappa 1> + (1-gamma) <rho, v>
                   + sum_a <lam_a, (gamma P_a - I) v>,

maximized over ``lam`` and minimized over ``u >= 0`` and free ``v``.

The sampled estimators take a :class:`SampleTransition` ``(s, a, s', s0)``
together with the sampling probability ``zeta(s, a)``. ``z_value``,
``stoch_grad_lambda``, ``stoch_grad_u`` and ``sampled_lagrangian`` also
accept batches: give array-valued sample fields and they broadcast.

Note that the sampled Lagrangian is unbiased for ``L - M`` rather than
``L``: the shift enters as ``-M sum_{s,a} lam(s,a) = -M``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CmdpModel


@dataclass(frozen=True)
class DualVars:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def check(self, u_radius: float, v_radius: float, tol: float = 1e-9) -> None:
        if (self.u < -tol).any():
            raise ValueError(f"u has a negative entry: {self.u.min()}")
        if self.u.sum() > u_radius + tol:
            raise ValueError(f"||u||_1 = {self.u.sum()} exceeds radius {u_radius}")
        if self.v.size and np.abs(self.v).max() > v_radius + tol:
            raise ValueError(f"||v||_inf = {np.abs(self.v).max()} exceeds radius {v_radius}")

    @classmethod
    def zeros(cls, num_constraints: int, num_states: int) -> "DualVars":
        return cls(np.zeros(num_constraints), np.zeros(num_states))


@dataclass(frozen=True)
class SampleTransition:
    """One generative-model draw: ``(s, a) ~ zeta``, ``s' ~ P(.|s, a)``, ``s0 ~ rho``.

    ``reward`` and ``costs`` are the observed ``r(s, a)`` and ``g(s, a)``
    (the latter of length I, or shape (N, I) for a batch).
    """

    s: int
    a: int
    s_next: int
    s0: int
    reward: float
    costs: np.ndarray

    @classmethod
    def from_model(cls, model: CmdpModel, s, a, s_next, s0) -> "SampleTransition":
        s, a = np.asarray(s), np.asarray(a)
        costs = np.moveaxis(model.constraint_costs[:, s, a], 0, -1)
        return cls(s, a, s_next, s0, model.reward[s, a], costs)


def _require_positive(zeta_value) -> None:
    if np.any(np.asarray(zeta_value) <= 0):
        raise ValueError("sampling probability zeta(s, a) must be positive")


def exact_lagrangian(model: CmdpModel, lam, duals: DualVars, kappa: float) -> float:
    lam = np.asarray(lam, dtype=float)
    gamma = model.discount
    G_lam = np.einsum("isa,sa->i", model.constraint_costs, lam)
    # sum_a <lam_a, (gamma P_a - I) v>
    flow_term = gamma * np.einsum("sa,ast,t->", lam, model.transition, duals.v) - lam.sum(axis=1) @ duals.v
    return float(
        np.sum(lam * model.reward)
        + duals.u @ (G_lam - kappa)
        + (1.0 - gamma) * model.initial_dist @ duals.v
        + flow_term
    )


def exact_gradients(model: CmdpModel, lam, duals: DualVars, kappa: float):
    """Exact ``(grad_u L, grad_v L)``; both are independent of the duals."""
    lam = np.asarray(lam, dtype=float)
    gamma = model.discount
    grad_u = np.einsum("isa,sa->i", model.constraint_costs, lam) - kappa
    grad_v = (
        (1.0 - gamma) * model.initial_dist
        + gamma * np.einsum("sa,ast->t", lam, model.transition)
        - lam.sum(axis=1)
    )
    return grad_u, grad_v


def exact_grad_lambda(model: CmdpModel, duals: DualVars) -> np.ndarray:
    """``grad_lam L[s, a] = r + sum_i u_i g^i + gamma P_a(s,.) v - v(s)``."""
    gamma = model.discount
    return (
        model.reward
        + np.einsum("i,isa->sa", duals.u, model.constraint_costs)
        + gamma * np.einsum("ast,t->sa", model.transition, duals.v)
        - duals.v[:, None]
    )


def z_value(sample: SampleTransition, duals: DualVars, gamma: float):
    """``Z = r(s,a) + gamma v(s') - v(s) + sum_i u_i g^i(s,a)``."""
    v = duals.v
    return sample.reward + gamma * v[sample.s_next] - v[sample.s] + np.asarray(sample.costs) @ duals.u


def stoch_grad_lambda(sample: SampleTransition, zeta_value, duals: DualVars, gamma: float, M: float):
    """Value of the single nonzero entry, at ``(sample.s, sample.a)``, of the lambda-gradient estimate."""
    _require_positive(zeta_value)
    return (z_value(sample, duals, gamma) - M) / zeta_value


def stoch_grad_u(sample: SampleTransition, zeta_value, lambda_value, kappa: float) -> np.ndarray:
    """``lam(s,a) g(s,a) / zeta(s,a) - kappa 1``."""
    _require_positive(zeta_value)
    weight = np.asarray(lambda_value / np.asarray(zeta_value, dtype=float))
    return weight[..., None] * np.asarray(sample.costs) - kappa


def stoch_grad_v(sample: SampleTransition, zeta_value: float, lambda_value: float, gamma: float):
    """Sparse v-gradient estimate as ``(indices, values)``.

    ``(1-gamma) e(s0) + lam(s,a)/zeta(s,a) (gamma e(s') - e(s))``, with
    coinciding indices summed into one entry.
    """
    _require_positive(zeta_value)
    w = lambda_value / zeta_value
    entries: dict[int, float] = {}
    for idx, val in ((int(sample.s0), 1.0 - gamma), (int(sample.s_next), gamma * w), (int(sample.s), -w)):
        entries[idx] = entries.get(idx, 0.0) + val
    idx = np.fromiter(entries.keys(), dtype=np.int64)
    return idx, np.fromiter(entries.values(), dtype=float)


def sampled_lagrangian(
    sample: SampleTransition, zeta_value, lambda_value, duals: DualVars, gamma: float, M: float, kappa: float
):
    """``(1-gamma) v(s0) + lam(s,a) (Z - M) / zeta(s,a) - kappa sum_i u_i``."""
    _require_positive(zeta_value)
    z = z_value(sample, duals, gamma)
    return (
        (1.0 - gamma) * duals.v[sample.s0]
        + lambda_value * (z - M) / zeta_value
        - kappa * duals.u.sum()
    )


def densify(indices, values, size: int) -> np.ndarray:
    out = np.zeros(size)
    np.add.at(out, indices, values)
    return out
