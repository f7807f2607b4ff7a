"""Vectorized numpy implementations of the simulation kernels.

Each function here has a loop-based twin in ``numba_impl``; the pair must stay
semantically identical.  All randomness comes in as pre-generated increment
arrays so that both backends reproduce the same sample paths.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "security_ensemble",
    "kuramoto_ensemble",
    "virus_agents",
    "virus_graph",
    "rooms_ensemble",
    "prosumer_ensemble",
]


def security_ensemble(x0v, a, abar, c, b, gx, gm, g0, q, eps, rho, r, h, dw):
    """Closed-loop investment game ensemble under state-and-mean feedback.

    ``x0v``: initial states, shape (P,).  ``gx, gm, g0``: per-agent feedback
    gains on the grid, shape (n, K+1), so agent i plays
    ``u_i = gx[i,k] x + gm[i,k] mean(x) + g0[i,k]``.  ``q, eps, rho, r``:
    per-agent running-reward weights on the grid, shape (n, K+1).  ``dw``:
    standard normals, shape (P, K).

    Returns ``(mean_path, var_path, reward_running, reward_total)`` where
    ``reward_running[i, k]`` is the ensemble mean of agent i's accumulated
    running reward up to step k and ``reward_total`` adds the terminal term.
    """
    n_paths, n_steps = dw.shape
    n = b.shape[0]
    sqrt_h = math.sqrt(h)
    x = x0v.astype(float).copy()
    mean_path = np.empty(n_steps + 1)
    var_path = np.empty(n_steps + 1)
    reward_running = np.zeros((n, n_steps + 1))
    acc = np.zeros((n, n_paths))
    for k in range(n_steps):
        m = x.mean()
        mean_path[k] = m
        var_path[k] = x.var()
        total = np.zeros(n_paths)
        for i in range(n):
            u = gx[i, k] * x + gm[i, k] * m + g0[i, k]
            total += b[i] * u
            acc[i] += h * (q[i, k] * x * (1.0 - eps[i, k] * x) - rho[i, k] * u - 0.5 * r[i, k] * u * u)
        reward_running[:, k + 1] = acc.mean(axis=1)
        x = x + h * (-a * x - abar * m + total) + c * sqrt_h * x * dw[:, k]
    mean_path[-1] = x.mean()
    var_path[-1] = x.var()
    terminal = -0.5 * (x - x.mean()) ** 2
    reward_total = acc.mean(axis=1) + terminal.mean()
    return mean_path, var_path, reward_running, reward_total


def kuramoto_ensemble(theta0, omega, kmat, sigma, eta, controlled, h, dw):
    """Phase-coupled oscillators, optionally under consensus feedback.

    ``dw``: standard normals, shape (K, n).  Returns phases, shape (K+1, n).
    """
    n_steps = dw.shape[0]
    theta = theta0.astype(float).copy()
    out = np.empty((n_steps + 1, theta.shape[0]))
    out[0] = theta
    sqrt_h = math.sqrt(h)
    for k in range(n_steps):
        s = np.sin(theta)
        co = np.cos(theta)
        coupling = co * (kmat @ s) - s * (kmat @ co)
        drift = omega + coupling
        if controlled:
            drift = drift + (-omega + eta * np.sin(theta.mean() - theta))
        theta = theta + h * drift + sigma * sqrt_h * dw[k]
        out[k + 1] = theta
    return out


def _virus_tables(counts, n, d_d, d_c, d_h, d_sm, lam, beta, eta, q1, q2, de_k, dm_k, h):
    """Per-state transition probabilities and targets for one step.

    Rows index the current state (D1, D2, C1, C2, H); each row lists up to
    four competing channels as (probability, target) pairs.  Probabilities are
    per-step (rate * h).
    """
    d1, d2, c1, c2, hh = counts / n
    d = d1 + d2
    c = c1 + c2
    pr = np.zeros((5, 4))
    tg = np.zeros((5, 4), dtype=np.int64)
    # dormant: pairwise meetings and saturating recruitment by the corrupt
    # pool both activate the node; spontaneous hardening sends it clean
    pr[0, 0] = 2.0 * lam * dm_k * dm_k * max(d1 - 1.0 / n, 0.0) * h
    tg[0, 0] = 2
    pr[0, 1] = beta * c1 / (q1 + d1) * h
    tg[0, 1] = 2
    pr[0, 2] = d_d * h
    tg[0, 2] = 4
    pr[1, 0] = 2.0 * lam * dm_k * dm_k * max(d2 - 1.0 / n, 0.0) * h
    tg[1, 0] = 3
    pr[1, 1] = beta * c2 / (q2 + d2) * h
    tg[1, 1] = 3
    pr[1, 2] = d_d * h
    tg[1, 2] = 4
    # corrupt: spontaneous hardening only
    pr[2, 0] = d_c * h
    tg[2, 0] = 4
    pr[3, 0] = d_c * h
    tg[3, 0] = 4
    # hardened: re-corruption per type, relapse to dormancy per type
    corrupt_rate = (d_h + (1.0 - d_h) * c) * h
    relapse_rate = (de_k * d_sm + dm_k * eta * d) * h
    pr[4, 0] = corrupt_rate
    tg[4, 0] = 2
    pr[4, 1] = corrupt_rate
    tg[4, 1] = 3
    pr[4, 2] = relapse_rate
    tg[4, 2] = 0
    pr[4, 3] = relapse_rate
    tg[4, 3] = 1
    return pr, tg


def virus_agents(states0, d_d, d_c, d_h, d_sm, lam, beta, eta, q1, q2, de, dm, h, uniforms):
    """Population-interaction agent simulator.

    ``states0``: int64 states in {0..4} = (D1, D2, C1, C2, H).  ``de, dm``:
    per-step action intensities, shape (K,).  ``uniforms``: shape (K, n), one
    draw per agent per step.  Returns state counts, shape (K+1, 5), int64.
    """
    n_steps = uniforms.shape[0]
    n = states0.shape[0]
    states = states0.astype(np.int64).copy()
    counts = np.zeros((n_steps + 1, 5), dtype=np.int64)
    counts[0] = np.bincount(states, minlength=5)
    for k in range(n_steps):
        pr, tg = _virus_tables(
            counts[k].astype(float), n, d_d, d_c, d_h, d_sm, lam, beta, eta, q1, q2, de[k], dm[k], h
        )
        cum = np.cumsum(pr, axis=1)
        u = uniforms[k]
        row_cum = cum[states]
        row_tg = tg[states]
        new_states = states.copy()
        undecided = np.ones(n, dtype=bool)
        for ch in range(4):
            hit = undecided & (u < row_cum[:, ch])
            new_states[hit] = row_tg[hit, ch]
            undecided &= ~hit
        states = new_states
        counts[k + 1] = np.bincount(states, minlength=5)
    return counts


def virus_graph(indptr, indices, states0, d_d, d_c, d_h, d_sm, lam, beta, eta, q1, q2, de, dm, h, uniforms):
    """Graph-interaction agent simulator; contact terms use neighbor fractions.

    ``indptr, indices``: CSR adjacency (no self loops).  Returns the per-node
    state path, shape (K+1, n), int8.
    """
    n_steps = uniforms.shape[0]
    n = states0.shape[0]
    states = states0.astype(np.int64).copy()
    out = np.empty((n_steps + 1, n), dtype=np.int8)
    out[0] = states
    deg = np.diff(indptr).astype(float)
    safe_deg = np.where(deg > 0, deg, 1.0)
    for k in range(n_steps):
        onehot = np.zeros((n, 5))
        onehot[np.arange(n), states] = 1.0
        if indices.size:
            nbr = np.add.reduceat(onehot[indices], indptr[:-1], axis=0)
            nbr[deg == 0] = 0.0
        else:
            nbr = np.zeros((n, 5))
        frac = nbr / safe_deg[:, None]
        d1, d2, c1, c2 = frac[:, 0], frac[:, 1], frac[:, 2], frac[:, 3]
        d = d1 + d2
        c = c1 + c2
        dm_k, de_k = dm[k], de[k]
        # per-node channel probabilities mirror the population tables, with
        # local fractions and no self-exclusion term (graphs have no loops)
        p0 = np.zeros(n)
        p1 = np.zeros(n)
        p2 = np.zeros(n)
        p3 = np.zeros(n)
        t0 = np.zeros(n, dtype=np.int64)
        t1 = np.zeros(n, dtype=np.int64)
        t2 = np.zeros(n, dtype=np.int64)
        t3 = np.zeros(n, dtype=np.int64)
        for s in range(5):
            mask = states == s
            if not np.any(mask):
                continue
            if s == 0 or s == 1:
                dloc = d1 if s == 0 else d2
                cloc = c1 if s == 0 else c2
                qq = q1 if s == 0 else q2
                p0[mask] = 2.0 * lam * dm_k * dm_k * dloc[mask] * h
                t0[mask] = 2 if s == 0 else 3
                p1[mask] = beta * cloc[mask] / (qq + dloc[mask]) * h
                t1[mask] = 2 if s == 0 else 3
                p2[mask] = d_d * h
                t2[mask] = 4
            elif s == 2 or s == 3:
                p0[mask] = d_c * h
                t0[mask] = 4
            else:
                corrupt = (d_h + (1.0 - d_h) * c[mask]) * h
                relapse = (de_k * d_sm + dm_k * eta * d[mask]) * h
                p0[mask] = corrupt
                t0[mask] = 2
                p1[mask] = corrupt
                t1[mask] = 3
                p2[mask] = relapse
                t2[mask] = 0
                p3[mask] = relapse
                t3[mask] = 1
        u = uniforms[k]
        c0 = p0
        c1_ = c0 + p1
        c2_ = c1_ + p2
        c3_ = c2_ + p3
        new_states = np.where(
            u < c0, t0, np.where(u < c1_, t1, np.where(u < c2_, t2, np.where(u < c3_, t3, states)))
        )
        states = new_states.astype(np.int64)
        out[k + 1] = states
    return out


def rooms_ensemble(t0v, text, price, eps1, e2, eps3, sigma, tref, tcomf, band_lo, band_hi,
                   k_gain, umax, pweight, h, dw):
    """Thermal comfort ensemble under a proportional price-aware law.

    ``t0v``: initial temperatures, shape (n,).  ``text, price``: exterior
    temperature and price on the grid, shape (K+1,).  ``e2``: inter-room
    exchange coefficients, shape (n, n).  ``dw``: standard normals, shape
    (P, K, n).  Returns ``(sample, mean, var, cost, comfort, effort)``.
    """
    n_paths, n_steps, n = dw.shape
    sqrt_h = math.sqrt(h)
    temps = np.tile(t0v.astype(float), (n_paths, 1))
    sample = np.empty((n_steps + 1, n))
    mean = np.empty((n_steps + 1, n))
    var = np.empty((n_steps + 1, n))
    sample[0] = temps[0]
    mean[0] = temps.mean(axis=0)
    var[0] = temps.var(axis=0)
    cost = np.zeros(n)
    comfort_hits = np.zeros(n)
    effort = np.zeros(n)
    row_sums = e2.sum(axis=1)
    for k in range(n_steps):
        gap = tcomf - temps
        lever = tref - temps
        # actuation only pushes toward comfort when the reference is on the
        # right side; otherwise the valve stays closed
        push = k_gain * gap / (eps3 * lever)
        u = np.where(gap * lever > 0, push, 0.0) / (1.0 + pweight * price[k])
        u = np.clip(u, 0.0, umax)
        exchange = temps @ e2.T - row_sums * temps
        drift = eps1 * (text[k] - temps) + exchange + eps3 * u * lever
        cost += h * (u * price[k] + gap * gap).mean(axis=0) + h * temps.var(axis=0)
        comfort_hits += ((temps >= band_lo) & (temps <= band_hi)).mean(axis=0)
        effort += h * u.mean(axis=0)
        temps = temps + h * drift + sigma * sqrt_h * dw[:, k, :]
        sample[k + 1] = temps[0]
        mean[k + 1] = temps.mean(axis=0)
        var[k + 1] = temps.var(axis=0)
    cost += temps.var(axis=0)
    comfort = comfort_hits / n_steps
    return sample, mean, var, cost, comfort, effort


def prosumer_ensemble(hist_vals, c1, c2, u, h, d, dw):
    """Delayed-state energy paths under a deterministic control schedule.

    Milstein step for ``de = (c1(t) e(t-tau) - u(t)) dt + c2(t) e(t-tau) dW``.
    ``hist_vals``: history values on the delay segment, shape (d+1,), with
    ``hist_vals[d]`` the state at t0.  ``c1, c2, u``: coefficient paths on the
    grid, shape (K+1,).  ``dw``: standard normals, shape (P, K).  Returns
    paths, shape (P, K+1).
    """
    n_paths, n_steps = dw.shape
    paths = np.empty((n_paths, n_steps + 1))
    paths[:, 0] = hist_vals[d]
    sqrt_h = math.sqrt(h)
    for k in range(n_steps):
        j = k - d
        e_del = paths[:, j] if j >= 0 else np.full(n_paths, hist_vals[k])
        if j >= 0:
            jj = j - d
            e_del2 = paths[:, jj] if jj >= 0 else np.full(n_paths, hist_vals[j])
            sig_del = c2[j] * e_del2
            dw_lag = dw[:, j]
        else:
            sig_del = np.zeros(n_paths)
            dw_lag = np.zeros(n_paths)
        drift = c1[k] * e_del - u[k]
        sig = c2[k] * e_del
        inc = sqrt_h * dw[:, k]
        inc_lag = sqrt_h * dw_lag
        paths[:, k + 1] = paths[:, k] + h * drift + sig * inc + c2[k] * sig_del * inc_lag * inc
    return paths
