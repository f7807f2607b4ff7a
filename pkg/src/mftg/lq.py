"""Linear-quadratic games with mean-field coupling.

Two solvers live here.  The continuous-time one handles an investment game
where ``n`` agents steer a shared scalar state

    dx = (-a x - abar E[x] + sum_i b_i u_i) dt + c x dW,

each maximizing a running reward ``q_i x (1 - eps_i x) - rho_i u_i -
(r_i/2) u_i^2`` minus the terminal spread ``(x(T) - E[x(T)])^2 / 2``.  The
equilibrium feedback is linear in the state and its mean, with coefficients
``(beta_i, eta1_i, eta2_i)`` solving a coupled backward Riccati system.

The discrete-time one is a variance-reduction game: agents pick linear gains
``u_it = eta_it (x_t - E x_t) + etabar_it E x_t`` minimizing a weighted sum of
state variance, squared mean, and control second moments.  Gains at each step
come out of small coupled linear systems solved backward in time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .core import Path, RandomStream, TimeGrid, as_time_function, rk4_integrate
from .errors import NonFiniteError, SingularStepError

__all__ = [
    "SecurityModel",
    "RiccatiSolution",
    "solve_security_riccati",
    "security_feedback",
    "simulate_security",
    "SecuritySimResult",
    "aggregate_security_model",
    "MeanVarianceModel",
    "MeanVarianceSolution",
    "solve_mean_variance",
    "mean_variance_cost",
    "simulate_mean_variance",
]

CoeffSpec = float | Callable[[float], float] | Sequence[float | Callable[[float], float]]


def _per_agent_fns(spec: CoeffSpec, n: int, name: str) -> list[Callable[[float], float]]:
    if np.ndim(spec) == 0 and not isinstance(spec, Sequence):
        return [as_time_function(spec)] * n
    if callable(spec):
        return [as_time_function(spec)] * n
    items = list(spec)
    if len(items) != n:
        raise ValueError(f"{name}: expected {n} per-agent entries, got {len(items)}")
    return [as_time_function(s) for s in items]


@dataclass(frozen=True)
class SecurityModel:
    """Continuous-time investment game with multiplicative state noise.

    Coefficient specs ``q, eps, rho, r`` accept a scalar, a callable of time,
    or one scalar/callable per agent.
    """

    n: int
    a: float
    abar: float
    c: float
    b: Sequence[float]
    q: CoeffSpec = 1.0
    eps: CoeffSpec = 0.0
    rho: CoeffSpec = 0.0
    r: CoeffSpec = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("need at least one agent")
        b = np.asarray(self.b, dtype=float)
        if b.shape != (self.n,):
            raise ValueError(f"b must have shape ({self.n},), got {b.shape}")
        object.__setattr__(self, "b", b)

    def coefficient_fns(self) -> dict[str, list[Callable[[float], float]]]:
        return {
            "q": _per_agent_fns(self.q, self.n, "q"),
            "eps": _per_agent_fns(self.eps, self.n, "eps"),
            "rho": _per_agent_fns(self.rho, self.n, "rho"),
            "r": _per_agent_fns(self.r, self.n, "r"),
        }

    def coefficient_grids(self, grid: TimeGrid) -> dict[str, np.ndarray]:
        """Coefficients evaluated on the grid, each of shape (n, n_steps+1)."""
        fns = self.coefficient_fns()
        times = grid.times()
        out = {}
        for name, per_agent in fns.items():
            arr = np.array([[fn(t) for t in times] for fn in per_agent])
            out[name] = arr
        if np.any(out["r"] <= 0):
            raise ValueError("r must be positive on the whole horizon")
        for name in ("q", "eps", "rho"):
            if np.any(out[name] < 0):
                raise ValueError(f"{name} must be nonnegative on the whole horizon")
        return out


@dataclass(frozen=True)
class RiccatiSolution:
    """Backward-sweep coefficients on the grid, each of shape (n, n_steps+1)."""

    grid: TimeGrid
    beta: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray


def solve_security_riccati(model: SecurityModel, grid: TimeGrid) -> RiccatiSolution:
    """Integrate the coupled Riccati system backward from the terminal data.

    Terminal values are ``beta_i = 1``, ``eta1_i = -1``, ``eta2_i = 0``; the
    sweep uses classical RK4 on the time-reversed system.
    """
    n = model.n
    fns = model.coefficient_fns()
    b = model.b
    a, abar, c = model.a, model.abar, model.c

    def forward_rhs(t: float, y: np.ndarray) -> np.ndarray:
        beta, eta1, eta2 = y[:n], y[n : 2 * n], y[2 * n :]
        r = np.array([fn(t) for fn in fns["r"]])
        q = np.array([fn(t) for fn in fns["q"]])
        eps = np.array([fn(t) for fn in fns["eps"]])
        rho = np.array([fn(t) for fn in fns["rho"]])
        k = b * b / r
        s_beta = float(np.sum(k * beta))
        s_eta1 = float(np.sum(k * eta1))
        s_mix = float(np.sum((b / r) * (b * eta2 + rho)))
        d_beta = (2.0 * a - c * c) * beta + beta * s_beta - 2.0 * q * eps
        d_eta1 = 2.0 * (a + abar) * eta1 + 2.0 * abar * beta + beta * s_eta1 + eta1 * (s_beta + s_eta1)
        d_eta2 = (a + abar) * eta2 + (beta + eta1) * s_mix + q
        return np.concatenate([d_beta, d_eta1, d_eta2])

    terminal = np.concatenate([np.ones(n), -np.ones(n), np.zeros(n)])
    span = grid.t1 - grid.t0

    def backward_rhs(s: float, z: np.ndarray) -> np.ndarray:
        return -forward_rhs(grid.t1 - s, z)

    rev = rk4_integrate(backward_rhs, terminal, TimeGrid(0.0, span, grid.n_steps))
    vals = rev.values[::-1]
    return RiccatiSolution(
        grid=grid,
        beta=vals[:, :n].T.copy(),
        eta1=vals[:, n : 2 * n].T.copy(),
        eta2=vals[:, 2 * n :].T.copy(),
    )


def security_feedback(
    model: SecurityModel,
    sol: RiccatiSolution,
    i: int,
    t: float,
    x: float | np.ndarray,
    ex: float,
) -> float | np.ndarray:
    """Equilibrium action of agent ``i`` at a grid time, state, and mean."""
    if not 0 <= i < model.n:
        raise ValueError(f"agent index {i} out of range")
    k = sol.grid.index_of(t)
    fns = model.coefficient_fns()
    r_i = fns["r"][i](t)
    rho_i = fns["rho"][i](t)
    b_i = model.b[i]
    return -(b_i / r_i) * (sol.beta[i, k] * x + sol.eta1[i, k] * ex + sol.eta2[i, k]) - rho_i / r_i


@dataclass(frozen=True)
class SecuritySimResult:
    """Closed-loop ensemble summary for the investment game."""

    mean: Path
    var: Path
    reward_running: np.ndarray
    reward: np.ndarray


def simulate_security(
    model: SecurityModel,
    sol: RiccatiSolution,
    x0: float,
    n_paths: int,
    stream: RandomStream,
) -> SecuritySimResult:
    """Simulate the closed-loop ensemble under the equilibrium feedback.

    All paths share the deterministic start ``x0``; the mean-field term is the
    synchronous ensemble average.  Rewards are per agent: running integrals on
    the grid plus the terminal spread penalty.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    grid = sol.grid
    coeffs = model.coefficient_grids(grid)
    b = model.b
    r, rho = coeffs["r"], coeffs["rho"]
    gx = -(b[:, None] / r) * sol.beta
    gm = -(b[:, None] / r) * sol.eta1
    g0 = -(b[:, None] / r) * sol.eta2 - rho / r
    dw = stream.normal_matrix(n_paths, grid.n_steps)
    mean_path, var_path, reward_running, reward_total = _kernels.security_ensemble(
        np.full(n_paths, float(x0)),
        model.a,
        model.abar,
        model.c,
        b,
        gx,
        gm,
        g0,
        coeffs["q"],
        coeffs["eps"],
        rho,
        r,
        grid.h,
        dw,
    )
    if not (np.all(np.isfinite(mean_path)) and np.all(np.isfinite(reward_total))):
        raise NonFiniteError("closed-loop ensemble diverged")
    return SecuritySimResult(
        mean=Path(grid, mean_path),
        var=Path(grid, var_path),
        reward_running=reward_running,
        reward=reward_total,
    )


def aggregate_security_model(model: SecurityModel) -> SecurityModel:
    """Single-planner surrogate for the fully cooperative benchmark.

    The planner controls one effort channel with the least-cost mix of the
    individual channels: ``b = sqrt(sum b_i^2 / r_i)`` with unit control
    weight, running reward summed across agents.  Requires constant ``r``.
    """
    fns = model.coefficient_fns()
    r0 = np.array([fn(0.0) for fn in fns["r"]])
    # constant-r check at two probe times; callables vary silently otherwise
    r1 = np.array([fn(0.5) for fn in fns["r"]])
    if not np.allclose(r0, r1):
        raise ValueError("aggregation requires time-constant control weights")
    b = model.b
    b_agg = float(np.sqrt(np.sum(b * b / r0)))
    if b_agg == 0.0:
        raise ValueError("aggregation needs at least one active control channel")
    q_fns, e_fns, rho_fns = fns["q"], fns["eps"], fns["rho"]

    def q_sum(t: float) -> float:
        return sum(fn(t) for fn in q_fns)

    def eps_eff(t: float) -> float:
        qs = q_sum(t)
        if qs == 0.0:
            return 0.0
        return sum(q_fns[i](t) * e_fns[i](t) for i in range(model.n)) / qs

    def rho_eff(t: float) -> float:
        return sum(rho_fns[i](t) * b[i] / r0[i] for i in range(model.n)) / b_agg

    return SecurityModel(
        n=1,
        a=model.a,
        abar=model.abar,
        c=model.c,
        b=[b_agg],
        q=[q_sum],
        eps=[eps_eff],
        rho=[rho_eff],
        r=[1.0],
    )


# ---------------------------------------------------------------------------
# discrete-time variance reduction


def _stage_array(spec, n: int, steps: int, name: str) -> np.ndarray:
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        arr = np.full((n, steps), float(arr))
    elif arr.ndim == 1:
        if arr.shape[0] == n:
            arr = np.repeat(arr[:, None], steps, axis=1)
        elif arr.shape[0] == steps:
            arr = np.repeat(arr[None, :], n, axis=0)
        else:
            raise ValueError(f"{name}: 1-d spec must have length n={n} or {steps}")
    elif arr.shape != (n, steps):
        raise ValueError(f"{name}: expected shape ({n}, {steps}), got {arr.shape}")
    return arr.copy()


@dataclass(frozen=True)
class MeanVarianceModel:
    """Discrete-time variance-reduction game over ``T`` steps.

    ``q`` and ``qbar`` cover t = 0..T (terminal included); ``r`` covers
    t = 0..T-1.  Specs broadcast from scalars or per-agent vectors.
    """

    n: int
    T: int
    a: float
    abar: float
    sigma: float
    b: Sequence[float]
    q: object = 1.0
    qbar: object = 0.0
    r: object = 1.0

    def __post_init__(self) -> None:
        if self.n < 1 or self.T < 1:
            raise ValueError("need n >= 1 agents and T >= 1 steps")
        b = np.asarray(self.b, dtype=float)
        if b.shape != (self.n,):
            raise ValueError(f"b must have shape ({self.n},), got {b.shape}")
        q = _stage_array(self.q, self.n, self.T + 1, "q")
        qbar = _stage_array(self.qbar, self.n, self.T + 1, "qbar")
        r = _stage_array(self.r, self.n, self.T, "r")
        if np.any(q < 0) or np.any(q + qbar < 0):
            raise ValueError("need q >= 0 and q + qbar >= 0")
        if np.any(r <= 0):
            raise ValueError("need r > 0")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qbar", qbar)
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class MeanVarianceSolution:
    """Backward-recursion output: value weights and feedback gains."""

    beta: np.ndarray  # (n, T+1)
    gamma: np.ndarray  # (n, T+1)
    eta: np.ndarray  # (n, T)
    etabar: np.ndarray  # (n, T)


def _solve_gain_system(r_t: np.ndarray, b: np.ndarray, w: np.ndarray, drive: float) -> np.ndarray:
    """Solve the coupled stage gains: r_i g_i + b_i w_i sum_j b_j g_j = -drive b_i w_i.

    ``w`` is the next-step value weight (beta or gamma).  The matrix is a
    positive diagonal plus a rank-one tilt, so it is invertible whenever all
    ``r_i > 0`` and ``w_i >= 0``.
    """
    mat = np.diag(r_t) + np.outer(b * w, b)
    rhs = -drive * b * w
    try:
        gains = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularStepError(f"stage gain system is singular: {exc}") from exc
    if not np.all(np.isfinite(gains)):
        raise SingularStepError("stage gain system produced non-finite gains")
    return gains


def solve_mean_variance(model: MeanVarianceModel) -> MeanVarianceSolution:
    """Backward sweep of the coupled discrete Riccati recursions."""
    n, T = model.n, model.T
    b = model.b
    beta = np.empty((n, T + 1))
    gamma = np.empty((n, T + 1))
    eta = np.empty((n, T))
    etabar = np.empty((n, T))
    beta[:, T] = model.q[:, T]
    gamma[:, T] = model.q[:, T] + model.qbar[:, T]
    for t in range(T - 1, -1, -1):
        r_t = model.r[:, t]
        eta[:, t] = _solve_gain_system(r_t, b, beta[:, t + 1], model.a)
        etabar[:, t] = _solve_gain_system(r_t, b, gamma[:, t + 1], model.a + model.abar)
        s = float(np.sum(b * eta[:, t]))
        sbar = float(np.sum(b * etabar[:, t]))
        for i in range(n):
            s_noti = s - b[i] * eta[i, t]
            closed = model.a + s_noti
            denom = r_t[i] + b[i] ** 2 * beta[i, t + 1]
            beta[i, t] = (
                model.q[i, t]
                + beta[i, t + 1] * closed**2
                - (b[i] * beta[i, t + 1] * closed) ** 2 / denom
            )
            sbar_noti = sbar - b[i] * etabar[i, t]
            closed_bar = model.a + model.abar + sbar_noti
            denom_bar = r_t[i] + b[i] ** 2 * gamma[i, t + 1]
            gamma[i, t] = (
                model.q[i, t]
                + model.qbar[i, t]
                + gamma[i, t + 1] * closed_bar**2
                - (b[i] * gamma[i, t + 1] * closed_bar) ** 2 / denom_bar
            )
    if np.any(beta < 0) or np.any(gamma < 0):
        raise SingularStepError("value weights went negative; check stage weights")
    return MeanVarianceSolution(beta=beta, gamma=gamma, eta=eta, etabar=etabar)


def mean_variance_cost(
    model: MeanVarianceModel, sol: MeanVarianceSolution, v0: float, m0: float
) -> np.ndarray:
    """Equilibrium cost of each agent from initial variance and mean."""
    if v0 < 0:
        raise ValueError("initial variance must be nonnegative")
    noise = model.sigma**2 * np.sum(sol.beta[:, 1:], axis=1)
    return sol.beta[:, 0] * v0 + sol.gamma[:, 0] * m0**2 + noise


def simulate_mean_variance(
    model: MeanVarianceModel,
    sol: MeanVarianceSolution,
    m0: float,
    v0: float,
    n_paths: int,
    stream: RandomStream,
) -> np.ndarray:
    """Monte-Carlo estimate of each agent's realized cost under the gains.

    Starts from a normal ensemble with the given mean and variance; the
    mean-field term is the ensemble average.  Returns one realized cost per
    agent, computed from ensemble moments at every stage.
    """
    rng = stream.generator()
    x = m0 + np.sqrt(max(v0, 0.0)) * rng.standard_normal(n_paths)
    noise = rng.standard_normal((model.T, n_paths))
    cost = np.zeros(model.n)
    for t in range(model.T):
        m_hat = x.mean()
        v_hat = x.var(ddof=1)
        u = sol.eta[:, t][:, None] * (x - m_hat) + sol.etabar[:, t][:, None] * m_hat
        cost += model.q[:, t] * v_hat + (model.q[:, t] + model.qbar[:, t]) * m_hat**2
        cost += model.r[:, t] * (u.var(axis=1, ddof=1) + u.mean(axis=1) ** 2)
        x = model.a * x + model.abar * m_hat + (model.b[:, None] * u).sum(axis=0) + model.sigma * noise[t]
    cost += model.q[:, model.T] * x.var(ddof=1)
    cost += (model.q[:, model.T] + model.qbar[:, model.T]) * x.mean() ** 2
    return cost
