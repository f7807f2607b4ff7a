"""Numba-compiled implementations of the simulation kernels.

Loop-for-loop twins of ``numpy_impl``; signatures and semantics must match.
Kernels are compiled lazily on first call and cached on disk.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = [
    "security_ensemble",
    "kuramoto_ensemble",
    "virus_agents",
    "virus_graph",
    "rooms_ensemble",
    "prosumer_ensemble",
]


@njit(cache=True)
def security_ensemble(x0v, a, abar, c, b, gx, gm, g0, q, eps, rho, r, h, dw):
    n_paths, n_steps = dw.shape
    n = b.shape[0]
    sqrt_h = np.sqrt(h)
    x = x0v.astype(np.float64).copy()
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
            for p in range(n_paths):
                u = gx[i, k] * x[p] + gm[i, k] * m + g0[i, k]
                total[p] += b[i] * u
                acc[i, p] += h * (
                    q[i, k] * x[p] * (1.0 - eps[i, k] * x[p])
                    - rho[i, k] * u
                    - 0.5 * r[i, k] * u * u
                )
            reward_running[i, k + 1] = acc[i].mean()
        for p in range(n_paths):
            x[p] = x[p] + h * (-a * x[p] - abar * m + total[p]) + c * sqrt_h * x[p] * dw[p, k]
    mt = x.mean()
    mean_path[n_steps] = mt
    var_path[n_steps] = x.var()
    term = 0.0
    for p in range(n_paths):
        term += -0.5 * (x[p] - mt) ** 2
    term /= n_paths
    reward_total = np.empty(n)
    for i in range(n):
        reward_total[i] = acc[i].mean() + term
    return mean_path, var_path, reward_running, reward_total


@njit(cache=True)
def kuramoto_ensemble(theta0, omega, kmat, sigma, eta, controlled, h, dw):
    n_steps = dw.shape[0]
    n = theta0.shape[0]
    theta = theta0.astype(np.float64).copy()
    out = np.empty((n_steps + 1, n))
    out[0] = theta
    sqrt_h = np.sqrt(h)
    for k in range(n_steps):
        mean_theta = theta.mean()
        new = np.empty(n)
        for i in range(n):
            coupling = 0.0
            for j in range(n):
                coupling += kmat[i, j] * np.sin(theta[j] - theta[i])
            drift = omega[i] + coupling
            if controlled:
                drift += -omega[i] + eta[i] * np.sin(mean_theta - theta[i])
            new[i] = theta[i] + h * drift + sigma * sqrt_h * dw[k, i]
        theta = new
        out[k + 1] = theta
    return out


@njit(cache=True)
def _virus_tables_nb(counts, n, d_d, d_c, d_h, d_sm, lam, beta, eta, q1, q2, de_k, dm_k, h):
    d1 = counts[0] / n
    d2 = counts[1] / n
    c1 = counts[2] / n
    c2 = counts[3] / n
    d = d1 + d2
    c = c1 + c2
    pr = np.zeros((5, 4))
    tg = np.zeros((5, 4), dtype=np.int64)
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
    pr[2, 0] = d_c * h
    tg[2, 0] = 4
    pr[3, 0] = d_c * h
    tg[3, 0] = 4
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


@njit(cache=True)
def virus_agents(states0, d_d, d_c, d_h, d_sm, lam, beta, eta, q1, q2, de, dm, h, uniforms):
    n_steps = uniforms.shape[0]
    n = states0.shape[0]
    states = states0.astype(np.int64).copy()
    counts = np.zeros((n_steps + 1, 5), dtype=np.int64)
    for i in range(n):
        counts[0, states[i]] += 1
    for k in range(n_steps):
        pr, tg = _virus_tables_nb(
            counts[k].astype(np.float64), float(n), d_d, d_c, d_h, d_sm, lam, beta, eta, q1, q2,
            de[k], dm[k], h,
        )
        new_states = states.copy()
        for i in range(n):
            s = states[i]
            u = uniforms[k, i]
            cum = 0.0
            for ch in range(4):
                cum += pr[s, ch]
                if u < cum:
                    new_states[i] = tg[s, ch]
                    break
        states = new_states
        for s in range(5):
            counts[k + 1, s] = 0
        for i in range(n):
            counts[k + 1, states[i]] += 1
    return counts


@njit(cache=True)
def virus_graph(indptr, indices, states0, d_d, d_c, d_h, d_sm, lam, beta, eta, q1, q2, de, dm, h, uniforms):
    n_steps = uniforms.shape[0]
    n = states0.shape[0]
    states = states0.astype(np.int64).copy()
    out = np.empty((n_steps + 1, n), dtype=np.int8)
    out[0] = states
    for k in range(n_steps):
        dm_k = dm[k]
        de_k = de[k]
        new_states = states.copy()
        for i in range(n):
            lo, hi = indptr[i], indptr[i + 1]
            deg = hi - lo
            d1 = 0.0
            d2 = 0.0
            c1 = 0.0
            c2 = 0.0
            if deg > 0:
                for jj in range(lo, hi):
                    sj = states[indices[jj]]
                    if sj == 0:
                        d1 += 1.0
                    elif sj == 1:
                        d2 += 1.0
                    elif sj == 2:
                        c1 += 1.0
                    elif sj == 3:
                        c2 += 1.0
                d1 /= deg
                d2 /= deg
                c1 /= deg
                c2 /= deg
            d = d1 + d2
            c = c1 + c2
            s = states[i]
            p0 = 0.0
            p1 = 0.0
            p2 = 0.0
            p3 = 0.0
            t0 = 0
            t1 = 0
            t2 = 0
            t3 = 0
            if s == 0 or s == 1:
                dloc = d1 if s == 0 else d2
                cloc = c1 if s == 0 else c2
                qq = q1 if s == 0 else q2
                p0 = 2.0 * lam * dm_k * dm_k * dloc * h
                t0 = 2 if s == 0 else 3
                p1 = beta * cloc / (qq + dloc) * h
                t1 = 2 if s == 0 else 3
                p2 = d_d * h
                t2 = 4
            elif s == 2 or s == 3:
                p0 = d_c * h
                t0 = 4
            else:
                corrupt = (d_h + (1.0 - d_h) * c) * h
                relapse = (de_k * d_sm + dm_k * eta * d) * h
                p0 = corrupt
                t0 = 2
                p1 = corrupt
                t1 = 3
                p2 = relapse
                t2 = 0
                p3 = relapse
                t3 = 1
            u = uniforms[k, i]
            if u < p0:
                new_states[i] = t0
            elif u < p0 + p1:
                new_states[i] = t1
            elif u < p0 + p1 + p2:
                new_states[i] = t2
            elif u < p0 + p1 + p2 + p3:
                new_states[i] = t3
        states = new_states
        out[k + 1] = states
    return out


@njit(cache=True)
def rooms_ensemble(t0v, text, price, eps1, e2, eps3, sigma, tref, tcomf, band_lo, band_hi,
                   k_gain, umax, pweight, h, dw):
    n_paths, n_steps, n = dw.shape
    sqrt_h = np.sqrt(h)
    temps = np.empty((n_paths, n))
    for p in range(n_paths):
        temps[p] = t0v
    sample = np.empty((n_steps + 1, n))
    mean = np.empty((n_steps + 1, n))
    var = np.empty((n_steps + 1, n))
    cost = np.zeros(n)
    comfort_hits = np.zeros(n)
    effort = np.zeros(n)
    row_sums = np.zeros(n)
    for i in range(n):
        for j in range(n):
            row_sums[i] += e2[i, j]
    for i in range(n):
        sample[0, i] = temps[0, i]
        col = temps[:, i]
        mean[0, i] = col.mean()
        var[0, i] = col.var()
    for k in range(n_steps):
        for i in range(n):
            col = temps[:, i]
            mu = col.mean()
            v = col.var()
            cost[i] += h * v
            run = 0.0
            hits = 0.0
            eff = 0.0
            for p in range(n_paths):
                ti = temps[p, i]
                gap = tcomf - ti
                lever = tref - ti
                if gap * lever > 0:
                    u = k_gain * gap / (eps3 * lever) / (1.0 + pweight * price[k])
                else:
                    u = 0.0
                if u < 0.0:
                    u = 0.0
                elif u > umax:
                    u = umax
                run += u * price[k] + gap * gap
                eff += u
                if band_lo <= ti <= band_hi:
                    hits += 1.0
            cost[i] += h * run / n_paths
            comfort_hits[i] += hits / n_paths
            effort[i] += h * eff / n_paths
        new = np.empty((n_paths, n))
        for p in range(n_paths):
            for i in range(n):
                ti = temps[p, i]
                gap = tcomf - ti
                lever = tref - ti
                if gap * lever > 0:
                    u = k_gain * gap / (eps3 * lever) / (1.0 + pweight * price[k])
                else:
                    u = 0.0
                if u < 0.0:
                    u = 0.0
                elif u > umax:
                    u = umax
                exchange = 0.0
                for j in range(n):
                    exchange += e2[i, j] * temps[p, j]
                exchange -= row_sums[i] * ti
                drift = eps1 * (text[k] - ti) + exchange + eps3 * u * lever
                new[p, i] = ti + h * drift + sigma * sqrt_h * dw[p, k, i]
        temps = new
        for i in range(n):
            sample[k + 1, i] = temps[0, i]
            col = temps[:, i]
            mean[k + 1, i] = col.mean()
            var[k + 1, i] = col.var()
    for i in range(n):
        cost[i] += temps[:, i].var()
    comfort = comfort_hits / n_steps
    return sample, mean, var, cost, comfort, effort


@njit(cache=True)
def prosumer_ensemble(hist_vals, c1, c2, u, h, d, dw):
    n_paths, n_steps = dw.shape
    paths = np.empty((n_paths, n_steps + 1))
    for p in range(n_paths):
        paths[p, 0] = hist_vals[d]
    sqrt_h = np.sqrt(h)
    for k in range(n_steps):
        j = k - d
        for p in range(n_paths):
            if j >= 0:
                e_del = paths[p, j]
                jj = j - d
                e_del2 = paths[p, jj] if jj >= 0 else hist_vals[j]
                sig_del = c2[j] * e_del2
                dw_lag = sqrt_h * dw[p, j]
            else:
                e_del = hist_vals[k]
                sig_del = 0.0
                dw_lag = 0.0
            drift = c1[k] * e_del - u[k]
            sig = c2[k] * e_del
            inc = sqrt_h * dw[p, k]
            paths[p, k + 1] = paths[p, k] + h * drift + sig * inc + c2[k] * sig_del * dw_lag * inc
    return paths
