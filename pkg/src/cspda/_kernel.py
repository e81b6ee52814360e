"""Compiled inner loop of the primal-dual solver.

The occupancy iterate is kept as unnormalized weights in a binary sum tree,
so sampling from it, the one-coordinate mirror update and the total weight
are all O(log |S||A|). Iterate averages are accumulated lazily: a coordinate
only pays when its value changes, and everything is flushed at log points
and at renormalization.
"""
import numpy as np
from numba import njit

EXP_CLAMP = 50.0

# status codes
OK = 0
NAN = 1


@njit(cache=True)
def tree_capacity(n):
    cap = 1
    while cap < n:
        cap *= 2
    return cap


@njit(cache=True)
def tree_build(tree, w, cap):
    tree[:] = 0.0
    for k in range(w.shape[0]):
        tree[cap + k] = w[k]
    for node in range(cap - 1, 0, -1):
        tree[node] = tree[2 * node] + tree[2 * node + 1]


@njit(cache=True)
def tree_set(tree, cap, k, value):
    node = cap + k
    tree[node] = value
    node //= 2
    while node >= 1:
        tree[node] = tree[2 * node] + tree[2 * node + 1]
        node //= 2


@njit(cache=True)
def tree_sample(tree, cap, n, u):
    """Index k with probability w[k] / total, for u uniform on [0, 1)."""
    target = u * tree[1]
    node = 1
    while node < cap:
        left = tree[2 * node]
        if target < left:
            node = 2 * node
        else:
            target -= left
            node = 2 * node + 1
    k = node - cap
    # round-off can walk into an empty or padding leaf; fall back to the last positive weight
    if k >= n or tree[node] <= 0.0:
        k = n - 1
        while k > 0 and tree[cap + k] <= 0.0:
            k -= 1
    return k


@njit(cache=True)
def invert_cdf(cdf, u):
    m = cdf.shape[0]
    for j in range(m):
        if u < cdf[j]:
            return j
    return m - 1


@njit(cache=True)
def project_l1_nonneg(x, radius):
    """Euclidean projection onto {x >= 0, sum(x) <= radius}."""
    y = np.maximum(x, 0.0)
    if y.sum() <= radius:
        return y
    z = np.sort(y)[::-1]
    cumsum = 0.0
    theta = 0.0
    for j in range(z.shape[0]):
        cumsum += z[j]
        t = (cumsum - radius) / (j + 1)
        if z[j] - t > 0.0:
            theta = t
    return np.maximum(y - theta, 0.0)


@njit(cache=True)
def kahan_add(acc, comp, k, x):
    y = x - comp[k]
    t = acc[k] + y
    comp[k] = (t - acc[k]) - y
    acc[k] = t


@njit(cache=True)
def flush_lambda(w, acc, comp, last_inv, inv_cum):
    for k in range(w.shape[0]):
        kahan_add(acc, comp, k, w[k] * (inv_cum - last_inv[k]))
        last_inv[k] = inv_cum


@njit(cache=True)
def flush_v(v, acc_v, comp_v, last_t, t_next):
    for j in range(v.shape[0]):
        kahan_add(acc_v, comp_v, j, v[j] * (t_next - last_t[j]))
        last_t[j] = t_next


@njit(cache=True)
def run_chunk(
    t_start, t_end, T, stride,
    unif, unif_next,
    reward, costs, trans_cdf, rho_cdf,
    gamma, delta, kappa, M, alpha, beta, u_radius, v_radius,
    w, tree, cap,
    u, v,
    acc_lam, comp_lam, last_inv, scal,
    acc_u, comp_u, acc_v, comp_v, last_v,
    snap_t, snap_lam, snap_avg_lam, snap_u, snap_v, snap_avg_u, snap_avg_v, snap_pos,
    counters,
):
    """Iterations ``t_start..t_end-1`` (1-based t); returns (status, t_fail).

    ``scal[0]`` carries the running sum of 1/W since the last lambda flush.
    ``counters`` = [positive-gradient events, next snapshot row].
    """
    S, A = reward.shape
    n = S * A
    I = costs.shape[0]
    mix = 1.0 - delta
    floor = delta / n
    grad_u = np.empty(I)
    for t in range(t_start, t_end):
        row = t - t_start
        total = tree[1]
        scal[0] += 1.0 / total
        for i in range(I):
            kahan_add(acc_u, comp_u, i, u[i])

        if t % stride == 0 or t == T:
            flush_lambda(w, acc_lam, comp_lam, last_inv, scal[0])
            flush_v(v, acc_v, comp_v, last_v, t + 1)
            r_ = counters[1]
            snap_t[r_] = t
            for k in range(n):
                snap_lam[r_, k] = w[k] / total
                snap_avg_lam[r_, k] = acc_lam[k] / t
            for i in range(I):
                snap_u[r_, i] = u[i]
                snap_avg_u[r_, i] = acc_u[i] / t
            for j in range(S):
                snap_v[r_, j] = v[j]
                snap_avg_v[r_, j] = acc_v[j] / t
            snap_pos[r_] = counters[0]
            counters[1] = r_ + 1

        # (s, a) ~ zeta = (1 - delta) lambda + delta / n
        if unif[row, 0] < mix:
            k = tree_sample(tree, cap, n, unif[row, 1])
        else:
            k = min(int(unif[row, 1] * n), n - 1)
        s = k // A
        a = k - s * A
        lam_k = w[k] / total
        zeta = mix * lam_k + floor
        s0 = invert_cdf(rho_cdf, unif[row, 2])
        s_next = invert_cdf(trans_cdf[s, a], unif_next[row])

        z = reward[s, a] + gamma * v[s_next] - v[s]
        for i in range(I):
            z += u[i] * costs[i, s, a]
        grad_lam = (z - M) / zeta
        if not np.isfinite(grad_lam):
            return NAN, t
        if grad_lam > 0.0:
            counters[0] += 1

        # dual steps use the iterate-t gradients
        ratio = lam_k / zeta
        for i in range(I):
            grad_u[i] = ratio * costs[i, s, a] - kappa
        if I > 0:
            u_new = project_l1_nonneg(u - alpha * grad_u, u_radius)
            for i in range(I):
                u[i] = u_new[i]

        g0 = 1.0 - gamma
        g1 = gamma * ratio
        g2 = -ratio
        if s_next == s0:
            g0 += g1
            g1 = 0.0
        if s == s0:
            g0 += g2
            g2 = 0.0
        elif s == s_next:
            g1 += g2
            g2 = 0.0
        for idx, gv in ((s0, g0), (s_next, g1), (s, g2)):
            if gv != 0.0:
                kahan_add(acc_v, comp_v, idx, v[idx] * (t + 1 - last_v[idx]))
                last_v[idx] = t + 1
                nv = v[idx] - alpha * gv
                if nv > v_radius:
                    nv = v_radius
                elif nv < -v_radius:
                    nv = -v_radius
                v[idx] = nv

        # closed-form mirror ascent on coordinate k, renormalization is implicit in W
        arg = beta * grad_lam
        if arg > EXP_CLAMP:
            arg = EXP_CLAMP
        kahan_add(acc_lam, comp_lam, k, w[k] * (scal[0] - last_inv[k]))
        last_inv[k] = scal[0]
        w[k] *= np.exp(arg)
        tree_set(tree, cap, k, w[k])

        if t % n == 0 or tree[1] < 1e-150:
            flush_lambda(w, acc_lam, comp_lam, last_inv, scal[0])
            total = tree[1]
            for kk in range(n):
                w[kk] /= total
                last_inv[kk] = 0.0
            scal[0] = 0.0
            tree_build(tree, w, cap)
    return OK, 0
