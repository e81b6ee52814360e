"""Conservative stochastic primal-dual solver for tabular CMDPs.

Each iteration samples ``(s, a)`` from ``zeta = (1 - delta) lam + delta/|S||A|``,
``s0 ~ rho`` and ``s' ~ P(.|s, a)`` from a generative model, takes projected
stochastic-gradient steps on the duals ``u`` (l1 ball, nonnegative) and ``v``
(l-inf ball), and an entropic mirror-ascent step on the occupancy measure.
The output is the uniform average of all iterates.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import _kernel
from .envs import GenerativeModel, TabularGenerativeModel, invert_cdf
from .lagrangian import DualVars, SampleTransition, stoch_grad_lambda, stoch_grad_u, stoch_grad_v
from .model import CmdpModel, evaluate_occupancy, flow_violation

CHUNK = 1 << 16


class ScheduleError(ValueError):
    """The iteration budget is too small for the requested conservative margin."""


class SolverDiverged(RuntimeError):
    def __init__(self, t: int):
        super().__init__(f"non-finite gradient at iteration {t}")
        self.t = t


@dataclass(frozen=True)
class SolverConfig:
    T: int
    alpha: float
    beta: float
    kappa: float
    M: float
    u_radius: float
    v_radius: float
    delta: float = 0.25
    phi: float = 0.2
    c_tilde1: float = 0.0
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 1/2), got {self.delta}")
        if self.phi <= 0:
            raise ValueError("phi must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.alpha <= 0 or self.beta < 0:
            raise ValueError("step sizes must be positive")
        if self.u_radius <= 0 or self.v_radius <= 0:
            raise ValueError("dual radii must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")


def complexity_term(model: CmdpModel) -> float:
    """``I |S||A| log(|S||A|)``, the dimension factor shared by all schedule constants."""
    n = model.num_pairs
    return model.num_constraints * n * math.log(n)


def min_iterations(model: CmdpModel, phi: float, c_tilde1: float) -> int:
    """Smallest T with ``kappa <= min(phi/2, 1)`` under the default kappa schedule."""
    gamma = model.discount
    bound = max(16.0, 4.0 * phi**2) * c_tilde1**2 * complexity_term(model) / ((1 - gamma) ** 2 * phi**2)
    return max(1, math.ceil(bound))


def derive_schedule(
    model: CmdpModel,
    phi: float,
    c_tilde1: float,
    T: int,
    G_max: float | None = None,
    *,
    delta: float = 0.25,
    seed: int = 0,
    log_every: int | None = None,
    kappa: float | None = None,
) -> SolverConfig:
    """Step sizes, margins and radii for a T-iteration run.

    ``kappa = 2 c1 / (1-gamma) sqrt(I n log n / T)`` (``n = |S||A|``),
    ``beta = (1-gamma) phi sqrt(log n / (T n))``,
    ``alpha = sqrt(|S|) / ((1-gamma) phi sqrt(T I))``. The dual radii and the
    shift ``M`` carry the cost bound ``G_max``:
    ``u_radius = 4/phi``, ``v_radius = 2 [1/(1-gamma) + 2 G/((1-gamma) phi)]``,
    ``M = 4 [G/phi + 1/(1-gamma) + 2 G/((1-gamma) phi)]``.

    Pass ``kappa`` to override the schedule value (0 runs the plain,
    non-conservative variant).
    """
    if phi <= 0:
        raise ValueError("phi must be positive")
    if c_tilde1 < 0:
        raise ValueError("c_tilde1 must be nonnegative")
    G = model.cost_bound if G_max is None else float(G_max)
    gamma = model.discount
    S, n = model.num_states, model.num_pairs
    I = model.num_constraints
    log_n = math.log(n)

    if kappa is None:
        kappa = 2.0 * c_tilde1 / (1.0 - gamma) * math.sqrt(complexity_term(model) / T)
        if kappa > min(phi / 2.0, 1.0):
            raise ScheduleError(
                f"T = {T} gives kappa = {kappa:.4g} > min(phi/2, 1); "
                f"need T >= {min_iterations(model, phi, c_tilde1)}"
            )
    beta = (1.0 - gamma) * phi * math.sqrt(log_n / (T * n))
    # without constraints the u-step is vacuous; I = 1 keeps alpha finite for v
    alpha = math.sqrt(S) / ((1.0 - gamma) * phi * math.sqrt(T * max(I, 1)))
    u_radius = 4.0 / phi
    v_radius = 2.0 * (1.0 / (1.0 - gamma) + 2.0 * G / ((1.0 - gamma) * phi))
    M = 4.0 * (G / phi + 1.0 / (1.0 - gamma) + 2.0 * G / ((1.0 - gamma) * phi))
    if log_every is None:
        log_every = max(1, T // 500)
    return SolverConfig(
        T=T, alpha=alpha, beta=beta, kappa=kappa, M=M, u_radius=u_radius, v_radius=v_radius,
        delta=delta, phi=phi, c_tilde1=c_tilde1, seed=seed, log_every=log_every,
    )


def project_u(u, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{u >= 0, ||u||_1 <= radius}``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return _kernel.project_l1_nonneg(np.asarray(u, dtype=float), float(radius))


def project_v(v, radius: float) -> np.ndarray:
    """Euclidean projection onto the l-inf ball of the given radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return np.clip(np.asarray(v, dtype=float), -radius, radius)


def mirror_step(lam, grad_entry: float, at, beta: float) -> np.ndarray:
    """KL-proximal ascent step for a gradient with one nonzero entry.

    Multiplies ``lam[at]`` by ``exp(beta * grad_entry)`` and renormalizes,
    i.e. ``lam'_k = lam_k exp(beta D_k) / sum_j lam_j exp(beta D_j)``.
    """
    lam = np.array(lam, dtype=float)
    if grad_entry > 0:
        warnings.warn("positive lambda-gradient entry; check the shift parameter M", RuntimeWarning, stacklevel=2)
    lam[at] *= math.exp(min(beta * grad_entry, _kernel.EXP_CLAMP))
    return lam / lam.sum()


@dataclass
class IterateLog:
    """Snapshots taken at ``t = log_every, 2 log_every, ...`` and at ``t = T``.

    ``lam``/``u``/``v`` are the current iterates and ``avg_*`` the running
    averages over iterations ``1..t``. Scalar summaries are derived on demand.
    """

    t: np.ndarray
    lam: np.ndarray
    avg_lam: np.ndarray
    u: np.ndarray
    v: np.ndarray
    avg_u: np.ndarray
    avg_v: np.ndarray
    positive_grad_events: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def summaries(self, model: CmdpModel) -> dict:
        out = {k: [] for k in (
            "objective", "constraint_values", "flow_residual", "u_norm", "v_norm",
            "avg_objective", "avg_constraint_values", "avg_flow_residual", "avg_u_norm", "avg_v_norm",
        )}
        for j in range(len(self)):
            cur = evaluate_occupancy(model, self.lam[j])
            avg = evaluate_occupancy(model, self.avg_lam[j])
            out["objective"].append(cur.objective)
            out["constraint_values"].append(cur.constraint_values)
            out["flow_residual"].append(cur.flow_residual)
            out["avg_objective"].append(avg.objective)
            out["avg_constraint_values"].append(avg.constraint_values)
            out["avg_flow_residual"].append(avg.flow_residual)
            out["u_norm"].append(np.abs(self.u[j]).sum())
            out["avg_u_norm"].append(np.abs(self.avg_u[j]).sum())
            out["v_norm"].append(np.abs(self.v[j]).max(initial=0.0))
            out["avg_v_norm"].append(np.abs(self.avg_v[j]).max(initial=0.0))
        return {k: np.array(v) for k, v in out.items()}


@dataclass
class SolverResult:
    avg_lambda: np.ndarray
    avg_duals: DualVars
    log: IterateLog
    final_lambda: np.ndarray
    final_duals: DualVars


def _streams(seed: int):
    main, env = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(main)), np.random.Generator(np.random.PCG64(env))


def _num_snapshots(T: int, stride: int) -> int:
    return -(-T // stride)


def _check_log(log: IterateLog, config: SolverConfig) -> None:
    tol = 1e-9
    for j in range(len(log)):
        lam = log.lam[j]
        if lam.min() < 0 or abs(lam.sum() - 1.0) > tol:
            raise AssertionError(f"lambda iterate at t={log.t[j]} is not a distribution")
        if log.u.shape[1] and (log.u[j].min() < -tol or log.u[j].sum() > config.u_radius + tol):
            raise AssertionError(f"u iterate left U at t={log.t[j]}")
        if np.abs(log.v[j]).max() > config.v_radius + tol:
            raise AssertionError(f"v iterate left V at t={log.t[j]}")


def run(model: CmdpModel, env: GenerativeModel | None, config: SolverConfig) -> SolverResult:
    """Run the solver for ``config.T`` iterations.

    With a :class:`TabularGenerativeModel` (or ``env=None``, meaning the
    model itself) the compiled loop is used; any other generative model
    goes through :func:`run_reference`.
    """
    if env is None:
        env = TabularGenerativeModel(model)
    if (env.num_states, env.num_actions, env.num_constraints) != (
        model.num_states, model.num_actions, model.num_constraints,
    ):
        raise ValueError("generative model dimensions do not match the CMDP model")
    if not isinstance(env, TabularGenerativeModel):
        return run_reference(model, env, config)

    S, A, I = model.num_states, model.num_actions, model.num_constraints
    n = S * A
    T, stride = config.T, config.log_every
    K = _num_snapshots(T, stride)
    cap = _kernel.tree_capacity(n)

    w = np.full(n, 1.0 / n)
    tree = np.zeros(2 * cap)
    _kernel.tree_build(tree, w, cap)
    u = np.zeros(I)
    v = np.zeros(S)
    acc_lam, comp_lam, last_inv = np.zeros(n), np.zeros(n), np.zeros(n)
    scal = np.zeros(1)
    acc_u, comp_u = np.zeros(I), np.zeros(I)
    acc_v, comp_v = np.zeros(S), np.zeros(S)
    last_v = np.ones(S)
    snap_t = np.zeros(K, dtype=np.int64)
    snap_lam, snap_avg_lam = np.zeros((K, n)), np.zeros((K, n))
    snap_u, snap_avg_u = np.zeros((K, I)), np.zeros((K, I))
    snap_v, snap_avg_v = np.zeros((K, S)), np.zeros((K, S))
    snap_pos = np.zeros(K, dtype=np.int64)
    counters = np.zeros(2, dtype=np.int64)

    costs = np.ascontiguousarray(model.constraint_costs)
    reward = np.ascontiguousarray(model.reward)
    rng_main, rng_env = _streams(config.seed)
    t = 1
    while t <= T:
        m = min(CHUNK, T - t + 1)
        unif = rng_main.random((m, 3))
        unif_next = rng_env.random(m)
        status, t_fail = _kernel.run_chunk(
            t, t + m, T, stride, unif, unif_next,
            reward, costs, env.transition_cdf, env.initial_cdf,
            model.discount, config.delta, config.kappa, config.M, config.alpha, config.beta,
            config.u_radius, config.v_radius,
            w, tree, cap, u, v,
            acc_lam, comp_lam, last_inv, scal,
            acc_u, comp_u, acc_v, comp_v, last_v,
            snap_t, snap_lam, snap_avg_lam, snap_u, snap_v, snap_avg_u, snap_avg_v, snap_pos,
            counters,
        )
        if status == _kernel.NAN:
            raise SolverDiverged(int(t_fail))
        t += m

    if counters[0]:
        warnings.warn(
            f"{counters[0]} positive lambda-gradient entries; M is too small for the dual radii",
            RuntimeWarning, stacklevel=2,
        )
    log = IterateLog(
        t=snap_t,
        lam=snap_lam.reshape(K, S, A),
        avg_lam=snap_avg_lam.reshape(K, S, A),
        u=snap_u, v=snap_v, avg_u=snap_avg_u, avg_v=snap_avg_v,
        positive_grad_events=snap_pos,
    )
    _check_log(log, config)
    total = tree[1]
    return SolverResult(
        avg_lambda=log.avg_lam[-1].copy(),
        avg_duals=DualVars(log.avg_u[-1].copy(), log.avg_v[-1].copy()),
        log=log,
        final_lambda=(w / total).reshape(S, A),
        final_duals=DualVars(u.copy(), v.copy()),
    )


def run_reference(model: CmdpModel, env: GenerativeModel, config: SolverConfig) -> SolverResult:
    """Dense, unoptimized loop over any generative model.

    Draws the same random streams as the compiled path (three uniforms per
    step from the main stream, ``env.sample_next`` on the second), so with a
    tabular environment both agree up to round-off.
    """
    S, A, I = env.num_states, env.num_actions, env.num_constraints
    n = S * A
    gamma = model.discount
    T, stride = config.T, config.log_every
    K = _num_snapshots(T, stride)
    rho_cdf = np.cumsum(model.initial_dist)

    lam = np.full((S, A), 1.0 / n)
    duals = DualVars.zeros(I, S)
    sum_lam, sum_u, sum_v = np.zeros((S, A)), np.zeros(I), np.zeros(S)
    snaps = {k: [] for k in ("t", "lam", "avg_lam", "u", "v", "avg_u", "avg_v", "pos")}
    positive = 0
    rng_main, rng_env = _streams(config.seed)
    for t in range(1, T + 1):
        sum_lam += lam
        sum_u += duals.u
        sum_v += duals.v
        if t % stride == 0 or t == T:
            for key, val in (("t", t), ("lam", lam.copy()), ("avg_lam", sum_lam / t), ("u", duals.u.copy()),
                             ("v", duals.v.copy()), ("avg_u", sum_u / t), ("avg_v", sum_v / t), ("pos", positive)):
                snaps[key].append(val)

        u_mix, u_idx, u_s0 = rng_main.random(3)
        if u_mix < 1.0 - config.delta:
            k = invert_cdf(np.cumsum(lam.ravel()), u_idx)
        else:
            k = min(int(u_idx * n), n - 1)
        s, a = divmod(k, A)
        zeta = (1.0 - config.delta) * lam[s, a] + config.delta / n
        s0 = invert_cdf(rho_cdf, u_s0)
        s_next = env.sample_next(s, a, rng_env)
        costs = np.array([env.cost(i, s, a) for i in range(I)])
        sample = SampleTransition(s, a, s_next, s0, env.reward(s, a), costs)

        grad_lam = stoch_grad_lambda(sample, zeta, duals, gamma, config.M)
        if not np.isfinite(grad_lam):
            raise SolverDiverged(t)
        positive += grad_lam > 0
        g_u = stoch_grad_u(sample, zeta, lam[s, a], config.kappa)
        idx, vals = stoch_grad_v(sample, zeta, lam[s, a], gamma)
        new_u = project_u(duals.u - config.alpha * g_u, config.u_radius) if I else duals.u
        new_v = duals.v.copy()
        new_v[idx] = project_v(new_v[idx] - config.alpha * vals, config.v_radius)
        duals = DualVars(new_u, new_v)
        lam = lam.copy()
        lam[s, a] *= math.exp(min(config.beta * grad_lam, _kernel.EXP_CLAMP))
        lam /= lam.sum()

    log = IterateLog(
        t=np.array(snaps["t"]),
        lam=np.array(snaps["lam"]),
        avg_lam=np.array(snaps["avg_lam"]),
        u=np.array(snaps["u"]).reshape(K, I),
        v=np.array(snaps["v"]),
        avg_u=np.array(snaps["avg_u"]).reshape(K, I),
        avg_v=np.array(snaps["avg_v"]),
        positive_grad_events=np.array(snaps["pos"]),
    )
    _check_log(log, config)
    return SolverResult(
        avg_lambda=sum_lam / T,
        avg_duals=DualVars(sum_u / T, sum_v / T),
        log=log,
        final_lambda=lam,
        final_duals=duals,
    )


def duality_gap(model: CmdpModel, avg_lambda, avg_duals: DualVars, lambda_star_kappa, config: SolverConfig) -> float:
    """``L(u_bar, v_bar, lam*_kappa) - min_{u in U, v in V} L(u, v, lam_bar)``.

    The inner minimum is closed form: the u-term is ``u_radius`` times the
    most negative tightened constraint value (or 0) and the v-term is
    ``-v_radius`` times the l1 flow defect of ``lam_bar``.
    """
    from .lagrangian import exact_lagrangian

    kappa = config.kappa
    upper = exact_lagrangian(model, lambda_star_kappa, avg_duals, kappa)
    lam = np.asarray(avg_lambda, dtype=float)
    slack = np.einsum("isa,sa->i", model.constraint_costs, lam) - kappa
    lower = (
        float(np.sum(lam * model.reward))
        + config.u_radius * min(0.0, slack.min(initial=0.0))
        - config.v_radius * np.abs(flow_violation(model, lam)).sum()
    )
    return upper - lower


def with_kappa(config: SolverConfig, kappa: float) -> SolverConfig:
    return replace(config, kappa=kappa)
