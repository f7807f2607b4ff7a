"""Route-choice learning dynamics over a shared network.

Commuters repeatedly pick routes from a finite menu; each route's cost
depends on the fraction of the population using it.  The module provides
the multiplicative-weights imitative update, its small-rate replicator
limit (ODE and closed form), equilibrium checks for both the population
and finite-commuter regimes, and a driver that iterates the learning
rules and records the full trajectory.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence

import numpy as np

from .core import check_simplex
from .errors import ConfigError, DegenerateSupportError

__all__ = [
    "RoutingGame",
    "StrategyState",
    "WardropReport",
    "LearningResult",
    "imitative_update",
    "replicator_rhs",
    "replicator_closed_form",
    "wardrop_check",
    "finite_equilibrium_check",
    "run_learning",
    "population_cost_oracle",
    "make_cost",
    "COST_KINDS",
]

CostFn = Callable[[int, int, float], float]


@dataclasses.dataclass(frozen=True)
class RoutingGame:
    """A congestion game on a fixed route menu.

    ``cost(x, u, m_u)`` maps a state index, a route index, and that
    route's load fraction to a scalar cost.  Costs are assumed continuous
    in the load (documented assumption, not checked).  ``n`` is the
    commuter count; ``None`` selects the infinite-population regime.
    """

    routes: tuple[str, ...]
    cost: CostFn
    states: tuple[str, ...] = ("nominal",)
    n: int | None = None

    def __post_init__(self):
        if len(self.routes) < 2:
            raise ValueError("need at least two routes")
        if len(self.states) < 1:
            raise ValueError("need at least one state")
        if self.n is not None and self.n < 1:
            raise ValueError("commuter count must be positive or None")

    @property
    def n_routes(self) -> int:
        return len(self.routes)

    def cost_vector(self, x: int, loads: np.ndarray) -> np.ndarray:
        """Evaluate every route's cost at the given per-route loads."""
        loads = np.asarray(loads, dtype=float)
        if loads.shape != (self.n_routes,):
            raise ValueError("loads must have one entry per route")
        out = np.array(
            [float(self.cost(x, u, float(loads[u]))) for u in range(self.n_routes)]
        )
        if np.any(np.isnan(out)):
            raise ValueError("cost function returned NaN")
        return out


@dataclasses.dataclass(frozen=True)
class StrategyState:
    """Per-agent mixed strategies plus the bookkeeping the updates need.

    ``cbar`` holds running time-averages of the cost estimates seen so
    far; ``round_index`` is how many rounds fed that average.
    """

    weights: np.ndarray
    rates: np.ndarray
    cbar: np.ndarray
    round_index: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        cb = np.asarray(self.cbar, dtype=float)
        if w.ndim != 2:
            raise ValueError("weights must be (n_agents, n_routes)")
        for row in w:
            check_simplex(row)
        if r.shape != (w.shape[0],):
            raise ValueError("one learning rate per agent")
        if np.any(r <= 0):
            raise ValueError("learning rates must be positive")
        if cb.shape != w.shape:
            raise ValueError("cbar must match weights shape")
        if self.round_index < 0:
            raise ValueError("round_index must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "cbar", cb)

    @classmethod
    def uniform(cls, n_agents: int, n_routes: int, rate: float = 1.0) -> "StrategyState":
        w = np.full((n_agents, n_routes), 1.0 / n_routes)
        return cls(w, np.full(n_agents, float(rate)), np.zeros((n_agents, n_routes)))


def _log_weights(m: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Combine log-strategy and additive scores, keeping zero-mass routes
    off the support exactly."""
    with np.errstate(divide="ignore"):
        logw = np.log(m) + scores
    logw[m == 0.0] = -np.inf
    return logw


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    finite = np.isfinite(logw)
    if not np.any(finite):
        raise DegenerateSupportError("no route carries positive weight")
    shift = logw[finite].max()
    w = np.exp(logw - shift)
    return w / w.sum()


def imitative_update(m_prev: Sequence[float], chat: Sequence[float], nu: float) -> np.ndarray:
    """One multiplicative-weights step: reweight by ``(1+nu)**(-chat)``.

    Routes outside the current support stay outside (faces are
    invariant).  Raises DegenerateSupportError when every route with
    finite cost carries zero mass, since the reweighted total would
    vanish.
    """
    m = np.asarray(m_prev, dtype=float)
    c = np.asarray(chat, dtype=float)
    if nu <= 0:
        raise ValueError("learning rate must be positive")
    check_simplex(m)
    if c.shape != m.shape:
        raise ValueError("cost vector shape mismatch")
    if np.any(np.isnan(c)) or np.any(c == -np.inf):
        raise ValueError("costs must be finite or +inf")
    if m[np.isfinite(c)].sum() <= 0.0:
        raise DegenerateSupportError("all mass sits on infinite-cost routes")
    return _normalize_log(_log_weights(m, -c * math.log1p(nu)))


def replicator_rhs(m: Sequence[float], chat: Sequence[float]) -> np.ndarray:
    """Tangent direction: grow routes cheaper than the current mixture."""
    m = np.asarray(m, dtype=float)
    c = np.asarray(chat, dtype=float)
    check_simplex(m)
    if c.shape != m.shape:
        raise ValueError("cost vector shape mismatch")
    return m * (float(m @ c) - c)


def replicator_closed_form(m0: Sequence[float], cbar: Sequence[float], t: float) -> np.ndarray:
    """Exact replicator solution under a frozen cost vector."""
    m = np.asarray(m0, dtype=float)
    c = np.asarray(cbar, dtype=float)
    check_simplex(m)
    if c.shape != m.shape:
        raise ValueError("cost vector shape mismatch")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if t == 0:
        return m.copy()
    return _normalize_log(_log_weights(m, -t * c))


@dataclasses.dataclass(frozen=True)
class WardropReport:
    """Outcome of a population-equilibrium check."""

    ok: bool
    costs: np.ndarray
    min_cost: float
    violations: tuple[int, ...]


def wardrop_check(
    game: RoutingGame, m: Sequence[float], x: int = 0, tol: float = 1e-9
) -> WardropReport:
    """Every route carrying mass must be (weakly) cheapest at this profile."""
    m = np.asarray(m, dtype=float)
    check_simplex(m)
    if m.shape != (game.n_routes,):
        raise ValueError("profile must have one entry per route")
    costs = game.cost_vector(x, m)
    min_cost = float(costs.min())
    bad = tuple(int(u) for u in range(game.n_routes) if m[u] > tol and costs[u] > min_cost + tol)
    return WardropReport(ok=not bad, costs=costs, min_cost=min_cost, violations=bad)


def finite_equilibrium_check(
    game: RoutingGame, assignment: Sequence[int], x: int = 0, tol: float = 1e-9
) -> bool:
    """No commuter gains by switching, counting its own 1/n on the target.

    The deviator's current cost is evaluated at the route's realized
    load (which already includes itself); a deviation to another route
    adds 1/n to that route's load.
    """
    if game.n is None:
        raise ValueError("finite check needs a finite commuter count")
    u_vec = np.asarray(assignment, dtype=int)
    if u_vec.shape != (game.n,):
        raise ValueError("assignment must list one route per commuter")
    if np.any(u_vec < 0) or np.any(u_vec >= game.n_routes):
        raise ValueError("route index out of range")
    loads = np.bincount(u_vec, minlength=game.n_routes) / game.n
    for ui in np.unique(u_vec):
        current = float(game.cost(x, int(ui), float(loads[ui])))
        for up in range(game.n_routes):
            if up == ui:
                continue
            dev = float(game.cost(x, up, float(loads[up] + 1.0 / game.n)))
            if current > dev + tol:
                return False
    return True


def population_cost_oracle(game: RoutingGame, x: int = 0):
    """Cost oracle evaluating routes at the mean of all mixed strategies."""

    def oracle(round_index: int, weights: np.ndarray) -> np.ndarray:
        load = weights.mean(axis=0)
        c = game.cost_vector(x, load)
        return np.broadcast_to(c, weights.shape).copy()

    return oracle


@dataclasses.dataclass(frozen=True)
class LearningResult:
    """Full learning trajectory.

    ``weights`` has shape (rounds+1, n_agents, n_routes); entry 0 is the
    initial state.  ``cost_vectors`` holds the per-round estimates fed to
    the update; ``realized`` is each agent's expected cost under its
    pre-update strategy.
    """

    weights: np.ndarray
    cost_vectors: np.ndarray
    realized: np.ndarray
    final_state: StrategyState


def run_learning(
    game: RoutingGame,
    state: StrategyState,
    horizon: int,
    mode: str = "imitative",
    cost_oracle=None,
    averaged: bool = False,
) -> LearningResult:
    """Iterate a learning rule for ``horizon`` rounds.

    ``mode`` picks the update: "imitative" applies the multiplicative
    reweighting with base (1+rate); "replicator" applies the exact
    time-``rate`` flow of the replicator equation under the round's
    frozen costs (an exponential reweighting, so the simplex and its
    faces stay invariant at machine precision).  With ``averaged`` the
    update consumes the running time-average cost instead of the latest
    estimate.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least one round")
    if mode not in ("imitative", "replicator"):
        raise ValueError("mode must be 'imitative' or 'replicator'")
    if state.weights.shape[1] != game.n_routes:
        raise ValueError("strategy width must match the route count")
    oracle = cost_oracle if cost_oracle is not None else population_cost_oracle(game)

    n_agents, n_routes = state.weights.shape
    weights = np.empty((horizon + 1, n_agents, n_routes))
    cost_vectors = np.empty((horizon, n_agents, n_routes))
    realized = np.empty((horizon, n_agents))
    weights[0] = state.weights
    cbar = state.cbar.copy()
    seen = state.round_index

    for t in range(horizon):
        chat = np.asarray(oracle(seen, weights[t]), dtype=float)
        if chat.shape != (n_agents, n_routes):
            raise ValueError("cost oracle must return one vector per agent")
        cost_vectors[t] = chat
        realized[t] = np.einsum("ar,ar->a", weights[t], chat)
        cbar = (seen * cbar + chat) / (seen + 1)
        seen += 1
        drive = cbar if averaged else chat
        for i in range(n_agents):
            if mode == "imitative":
                weights[t + 1, i] = imitative_update(weights[t, i], drive[i], state.rates[i])
            else:
                weights[t + 1, i] = replicator_closed_form(
                    weights[t, i], drive[i], float(state.rates[i])
                )

    final = StrategyState(weights[-1], state.rates, cbar, round_index=seen)
    return LearningResult(weights, cost_vectors, realized, final)


# ---------------------------------------------------------------------------
# cost catalog


COST_KINDS = ("linear", "affine", "pigou", "bpr")


def _per_route(value, n_states: int, n_routes: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full((n_states, n_routes), float(arr))
    elif arr.ndim == 1:
        if arr.shape != (n_routes,):
            raise ConfigError(f"{name} must have one entry per route")
        arr = np.tile(arr, (n_states, 1))
    elif arr.shape != (n_states, n_routes):
        raise ConfigError(f"{name} must be scalar, (routes,), or (states, routes)")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    return arr


def make_cost(kind: str, n_routes: int, n_states: int = 1, **params) -> CostFn:
    """Build a cost function from the named catalog.

    Kinds: ``linear`` (slope*m), ``affine`` (intercept + slope*m),
    ``pigou`` (a constant-cost route 0 and a load-proportional route 1),
    ``bpr`` (polynomial congestion: t0*(1 + alpha*(m/capacity)**power)).
    Coefficients may be scalars, per-route vectors, or (states, routes)
    tables.
    """
    if kind == "linear":
        slope = _per_route(params.pop("slope", 1.0), n_states, n_routes, "slope")
        fn = lambda x, u, m_u: slope[x, u] * m_u
    elif kind == "affine":
        intercept = _per_route(params.pop("intercept", 0.0), n_states, n_routes, "intercept")
        slope = _per_route(params.pop("slope", 1.0), n_states, n_routes, "slope")
        fn = lambda x, u, m_u: intercept[x, u] + slope[x, u] * m_u
    elif kind == "pigou":
        if n_routes != 2:
            raise ConfigError("pigou costs need exactly two routes")
        const = _per_route(params.pop("constant", 1.0), n_states, n_routes, "constant")
        fn = lambda x, u, m_u: const[x, u] if u == 0 else m_u
    elif kind == "bpr":
        t0 = _per_route(params.pop("t0", 1.0), n_states, n_routes, "t0")
        cap = _per_route(params.pop("capacity", 1.0), n_states, n_routes, "capacity")
        if np.any(cap <= 0):
            raise ConfigError("capacity must be positive")
        alpha = float(params.pop("alpha", 0.15))
        power = float(params.pop("power", 4.0))
        fn = lambda x, u, m_u: t0[x, u] * (1.0 + alpha * (m_u / cap[x, u]) ** power)
    else:
        raise ConfigError(f"unknown cost kind {kind!r}; choose from {COST_KINDS}")
    if params:
        raise ConfigError(f"unused cost parameters: {sorted(params)}")
    return fn
