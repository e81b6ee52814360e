"""Exact ground truth for tabular CMDPs via the occupancy-measure LP.

A small dense two-phase simplex (Bland's rule) solves

    max <lam, r>  s.t.  <lam, g^i> >= kappa,  sum_a (I - gamma P_a^T) lam_a = (1-gamma) rho,  lam >= 0

and returns duals in the Lagrangian convention: ``u >= 0`` for the
inequalities and free ``v`` for the flow equalities, so that at an optimum
``r + sum_i u_i g^i + gamma P v - v <= 0`` with equality on the support.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .lagrangian import DualVars, exact_grad_lambda
from .model import CmdpModel, flow_residual

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class SimplexResult:
    status: LpStatus
    x: np.ndarray | None
    objective: float
    duals: np.ndarray | None
    basis: list[int]


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]


def _iterate(T: np.ndarray, basis: list[int], allowed: np.ndarray) -> bool:
    """Run Bland-rule pivots on a maximization tableau; False if unbounded.

    The last row of ``T`` holds reduced costs ``c_j - c_B B^{-1} A_j``;
    a column may enter only where ``allowed`` is True.
    """
    m = T.shape[0] - 1
    while True:
        cost = T[-1, :-1]
        candidates = np.flatnonzero((cost > PIVOT_TOL) & allowed)
        if candidates.size == 0:
            return True
        col = int(candidates[0])
        column = T[:m, col]
        rows = np.flatnonzero(column > PIVOT_TOL)
        if rows.size == 0:
            return False
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, row, col)
        basis[row] = col


def simplex_solve(c, A, b) -> SimplexResult:
    """Solve ``max c^T x  s.t.  A x = b, x >= 0`` by the two-phase method.

    Linearly dependent rows are detected in phase one and dropped; their
    dual values are reported as zero.
    """
    c = np.asarray(c, dtype=float)
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    m, n = A.shape
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1

    # phase one: artificial basis, maximize -sum(artificials)
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = A.sum(axis=0)
    T[-1, -1] = b.sum()
    basis = list(range(n, n + m))
    allowed = np.ones(n + m, dtype=bool)
    _iterate(T, basis, allowed)
    if T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
        return SimplexResult(LpStatus.INFEASIBLE, None, float("nan"), None, basis)

    # drive remaining artificials out; a row with no structural pivot is redundant
    keep = []
    for r in range(m):
        if basis[r] >= n:
            structural = np.flatnonzero(np.abs(T[r, :n]) > PIVOT_TOL)
            if structural.size:
                col = int(structural[0])
                _pivot(T, r, col)
                basis[r] = col
                keep.append(r)
        else:
            keep.append(r)
    rows = np.array(keep, dtype=int)

    # phase two on the kept rows, artificials barred from entering
    T2 = np.zeros((rows.size + 1, n + 1))
    T2[:-1, :n] = T[rows, :n]
    T2[:-1, -1] = T[rows, -1]
    basis2 = [basis[r] for r in rows]
    T2[-1, :n] = c
    for r, j in enumerate(basis2):
        T2[-1] -= c[j] * T2[r]
    if not _iterate(T2, basis2, np.ones(n, dtype=bool)):
        return SimplexResult(LpStatus.UNBOUNDED, None, float("inf"), None, basis2)

    x = np.zeros(n)
    x[basis2] = T2[:-1, -1]
    x = np.clip(x, 0.0, None)
    B = A[np.ix_(rows, basis2)]
    y_kept = np.linalg.solve(B.T, c[basis2])
    y = np.zeros(m)
    y[rows] = y_kept
    y[flip] *= -1
    return SimplexResult(LpStatus.OPTIMAL, x, float(c @ x), y, basis2)


def _flow_matrix(model: CmdpModel) -> np.ndarray:
    # row s, column (s', a): [s == s'] - gamma P_a(s', s)
    S, A = model.num_states, model.num_actions
    F = np.zeros((S, S, A))
    F[np.arange(S), np.arange(S), :] = 1.0
    F -= model.discount * np.transpose(model.transition, (2, 1, 0))
    return F.reshape(S, S * A)


@dataclass
class LpSolution:
    lambda_star: np.ndarray | None
    objective: float
    dual_u: np.ndarray | None
    dual_v: np.ndarray | None
    status: LpStatus

    @property
    def duals(self) -> DualVars:
        return DualVars(self.dual_u, self.dual_v)


def solve_cmdp_lp(model: CmdpModel, kappa: float = 0.0) -> LpSolution:
    """Optimal occupancy measure of the kappa-tightened CMDP LP."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    S, A, I = model.num_states, model.num_actions, model.num_constraints
    n = S * A
    G = model.constraint_costs.reshape(I, n)
    # columns: lambda (n), surplus (I)
    A_eq = np.zeros((S + I, n + I))
    A_eq[:S, :n] = _flow_matrix(model)
    A_eq[S:, :n] = G
    A_eq[S:, n:] = -np.eye(I)
    b_eq = np.concatenate([(1.0 - model.discount) * model.initial_dist, np.full(I, kappa)])
    c = np.concatenate([model.reward.ravel(), np.zeros(I)])

    res = simplex_solve(c, A_eq, b_eq)
    if res.status is not LpStatus.OPTIMAL:
        return LpSolution(None, res.objective, None, None, res.status)
    lam = res.x[:n].reshape(S, A)
    return LpSolution(
        lambda_star=lam,
        objective=float(np.sum(lam * model.reward)),
        dual_u=np.clip(-res.duals[S:], 0.0, None),
        dual_v=res.duals[:S].copy(),
        status=LpStatus.OPTIMAL,
    )


def slater_margin(model: CmdpModel) -> float:
    """Largest ``phi`` with ``<lam, g^i> >= phi`` for all i over valid occupancy measures.

    Returns ``inf`` for a model without constraints; a negative value means
    no strictly feasible occupancy measure exists.
    """
    S, A, I = model.num_states, model.num_actions, model.num_constraints
    if I == 0:
        return float("inf")
    n = S * A
    G = model.constraint_costs.reshape(I, n)
    # columns: lambda (n), t+ , t-, surplus (I);  <g^i, lam> - t - s_i = 0
    A_eq = np.zeros((S + I, n + 2 + I))
    A_eq[:S, :n] = _flow_matrix(model)
    A_eq[S:, :n] = G
    A_eq[S:, n] = -1.0
    A_eq[S:, n + 1] = 1.0
    A_eq[S:, n + 2 :] = -np.eye(I)
    b_eq = np.concatenate([(1.0 - model.discount) * model.initial_dist, np.zeros(I)])
    c = np.zeros(n + 2 + I)
    c[n], c[n + 1] = 1.0, -1.0
    res = simplex_solve(c, A_eq, b_eq)
    if res.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"Slater-margin LP returned {res.status.value}")
    return res.objective


class MarginPreconditionError(ValueError):
    pass


def conservative_gap(model: CmdpModel, kappa: float, phi: float | None = None, tol: float = 1e-8):
    """Optimal-value loss from tightening the constraints by ``kappa``.

    Returns ``(gap, bound)`` with ``gap = p*(0) - p*(kappa)`` and
    ``bound = kappa / phi``; ``phi`` defaults to the model's Slater margin.
    Raises if ``kappa > min(phi / 2, 1)`` or the gap falls outside
    ``[0, bound]`` (beyond ``tol``).
    """
    if phi is None:
        phi = slater_margin(model)
    if phi <= 0:
        raise MarginPreconditionError(f"Slater margin {phi} is not positive")
    if kappa < 0 or kappa > min(phi / 2.0, 1.0):
        raise MarginPreconditionError(f"kappa = {kappa} violates 0 <= kappa <= min(phi/2, 1) with phi = {phi}")
    base = solve_cmdp_lp(model, 0.0)
    tight = solve_cmdp_lp(model, kappa)
    if base.status is not LpStatus.OPTIMAL or tight.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"LP status {base.status.value} / {tight.status.value}")
    gap = base.objective - tight.objective
    bound = kappa / phi
    if gap < -tol or gap > bound + tol:
        raise AssertionError(f"conservative gap {gap} outside [0, {bound}]")
    return gap, bound


def kkt_residuals(model: CmdpModel, sol: LpSolution, kappa: float) -> dict:
    """Residuals of the KKT system of the kappa-tightened LP (all ~0 at an optimum)."""
    lam = sol.lambda_star
    grad = exact_grad_lambda(model, sol.duals)
    G_lam = np.einsum("isa,sa->i", model.constraint_costs, lam)
    return {
        "stationarity": float(max(grad.max(), 0.0)),
        "support_slackness": float(np.abs(lam * grad).sum()),
        "primal_inequality": float(max(0.0, (kappa - G_lam).max(initial=0.0))),
        "primal_flow": flow_residual(model, lam),
        "complementary": float(abs(sol.dual_u @ (G_lam - kappa))) if G_lam.size else 0.0,
        "dual_sign": float(max(0.0, -sol.dual_u.min(initial=0.0))),
        "duality_gap": float(
            abs(sol.objective - (-kappa * sol.dual_u.sum() + (1 - model.discount) * model.initial_dist @ sol.dual_v))
        ),
    }


def dual_norm_bounds(model: CmdpModel, phi: float) -> tuple[float, float]:
    """Bounds on optimal duals: ``||u*||_1 <= 2/phi`` and ``||v*||_inf <= (1 + 2 G/phi)/(1-gamma)``."""
    gamma, G = model.discount, model.cost_bound
    return 2.0 / phi, 1.0 / (1.0 - gamma) + 2.0 * G / ((1.0 - gamma) * phi)
