"""Resource-renting and throughput-sharing games.

Two one-shot games over shared infrastructure.  In the renting game ``n``
clients bid demand for a divisible resource: each pays a unit price and
receives the fraction of the resource value proportional to ``demand**alpha``.
The symmetric equilibrium, the best-response root equation, the price that
makes equilibrium demand absorb the whole capacity, and the efficiency ratio
all have closed forms.

In the sharing game, nodes of a directed graph hand portions of their own
throughput to neighbors they care about.  Transfers conserve total
throughput; with strictly concave utilities an equilibrium exists, and on
every strictly used edge the giver's marginal utility equals the altruism
weight times the receiver's.  Equilibrium transfer matrices need not be
unique, but the throughput profile they induce is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RandomStream, bracketed_root
from .errors import (
    AlphaOutOfRangeError,
    ConfigError,
    InfeasibleSharingError,
)

__all__ = [
    "CloudGame",
    "SharingNetwork",
    "SharingResult",
    "best_response_oracle",
    "cloud_equilibrium",
    "cloud_payoff",
    "efficiency_ratio",
    "expost_throughput",
    "kkt_residual",
    "optimal_price",
    "participation_cap",
    "sharing_equilibrium",
    "sharing_payoffs",
]


@dataclass(frozen=True)
class CloudGame:
    """Renting game: ``n`` clients, return index ``alpha``, value ``c``, price ``p``.

    ``label`` carries an opaque tag for the server-availability state the
    value and price were quoted at; it plays no role in the arithmetic.
    """

    n: int
    alpha: float
    c: float
    p: float
    label: str = ""

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError(f"need at least 2 clients, got n={self.n}")
        object.__setattr__(self, "n", int(self.n))
        for name in ("alpha", "c", "p"):
            val = float(getattr(self, name))
            object.__setattr__(self, name, val)
            if not math.isfinite(val):
                raise ConfigError(f"{name} must be finite")
        if self.alpha < 0:
            raise ConfigError(f"return index alpha must be >= 0, got {self.alpha}")
        if self.c <= 0 or self.p <= 0:
            raise ConfigError("resource value c and unit price p must be positive")


def cloud_payoff(game: CloudGame, z: float, others_level: float) -> float:
    """Payoff to one client demanding ``z`` while every other demands ``others_level``.

    Proportional-share allocation minus the bill: ``c z^a / sum(z^a) - p z``,
    and zero when nobody demands anything.
    """
    if z < 0 or others_level < 0:
        raise ConfigError("demands must be nonnegative")
    own = z**game.alpha
    total = own + (game.n - 1) * others_level**game.alpha
    if total <= 0.0:
        return 0.0
    return game.c * own / total - game.p * z


def cloud_equilibrium(game: CloudGame) -> float:
    """Symmetric equilibrium demand ``alpha (n-1) c / (n^2 p)``.

    Valid for return indices up to one, where the payoff is concave in own
    demand and the equilibrium is unique; beyond that participation itself
    becomes strategic, see :func:`participation_cap`.
    """
    if game.alpha > 1.0:
        raise AlphaOutOfRangeError(
            f"closed form requires alpha <= 1, got {game.alpha}; "
            f"above 1 at most {participation_cap(game.alpha):.3f} clients stay active"
        )
    u = game.alpha * (game.n - 1) * game.c / (game.n**2 * game.p)
    # each client keeps 1/n of the value and pays p u; nonnegative for alpha <= 1
    payoff = (game.c / game.n) * (1.0 - game.alpha * (game.n - 1) / game.n)
    if payoff < -1e-12:
        raise AlphaOutOfRangeError(f"equilibrium payoff {payoff} went negative")
    return u


def best_response_oracle(game: CloudGame, g: float) -> float:
    """Best demand against an aggregate ``g`` of the others' transformed demands.

    ``g`` is the mean of the other clients' ``demand**alpha``.  The stationarity
    condition, written root-form as ``z^((a-1)/2) sqrt(a c g / (n p)) - z^a/n - g``,
    is solved by bisection on a bracket just above zero; no sign change there
    means the best response is the corner at zero demand.
    """
    if g <= 0:
        raise ConfigError(f"aggregate of others must be positive, got {g}")
    if game.alpha > 1.0:
        raise AlphaOutOfRangeError("root oracle covers alpha <= 1")
    a, c, p, n = game.alpha, game.c, game.p, game.n
    coef = math.sqrt(a * c * g / (n * p)) if a > 0 else 0.0

    def station(z: float) -> float:
        return z ** ((a - 1.0) / 2.0) * coef - z**a / n - g

    lo = 1e-13 * max(1.0, c / p)
    hi = 2.0 * c / p + 1.0
    return bracketed_root(station, lo, hi)


def optimal_price(n: int, alpha: float) -> float:
    """Price at which symmetric equilibrium demand exactly exhausts capacity."""
    if int(n) != n or n < 2:
        raise ConfigError(f"need at least 2 clients, got n={n}")
    if alpha <= 0:
        raise ConfigError(f"return index must be positive, got alpha={alpha}")
    return alpha * (n - 1) / n


def efficiency_ratio(game: CloudGame, u_star: float) -> float:
    """Fraction of the available capacity claimed by total demand ``n * u_star``.

    Exactly one at the capacity-clearing price of :func:`optimal_price`;
    below one when a higher price leaves capacity idle.  Prices below the
    clearing price oversell and push the ratio above one.
    """
    if u_star < 0:
        raise ConfigError("demand must be nonnegative")
    return game.n * u_star / game.c


def participation_cap(alpha: float) -> float:
    """Largest client count that stays active when returns are increasing.

    For ``alpha <= 1`` everyone participates regardless of crowd size; above
    one, more than ``alpha / (alpha - 1)`` clients drive the best response
    to zero.
    """
    if alpha <= 0:
        raise ConfigError(f"return index must be positive, got alpha={alpha}")
    if alpha <= 1.0:
        return math.inf
    return alpha / (alpha - 1.0)


# --------------------------------------------------------------------------
# throughput sharing


@dataclass(frozen=True)
class SharingNetwork:
    """Directed altruism graph over throughput holders.

    ``eps[i, j] > 0`` means node ``i`` values node ``j``'s utility with that
    weight and may hand throughput to ``j``.  ``thp0`` holds the pre-sharing
    throughputs; their sum caps any node's total outgoing transfer.  All
    nodes share the exponential utility ``-(1/theta) exp(-theta z)``.
    """

    eps: np.ndarray
    thp0: np.ndarray
    theta: float = 1.0

    def __post_init__(self) -> None:
        eps = np.asarray(self.eps, dtype=float)
        thp0 = np.asarray(self.thp0, dtype=float)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "thp0", thp0)
        object.__setattr__(self, "theta", float(self.theta))
        n = thp0.shape[0] if thp0.ndim == 1 else 0
        if n < 2:
            raise ConfigError("need at least 2 nodes with scalar throughputs")
        if eps.shape != (n, n):
            raise ConfigError(f"eps must be ({n}, {n}), got {eps.shape}")
        if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(thp0))):
            raise ConfigError("weights and throughputs must be finite")
        if np.any(eps < 0):
            raise ConfigError("altruism weights must be nonnegative")
        if np.any(np.diag(eps) != 0):
            raise ConfigError("self-altruism eps[i, i] must be zero")
        if np.any(thp0 < 0):
            raise ConfigError("initial throughputs must be nonnegative")
        if self.theta <= 0:
            raise ConfigError(f"utility curvature theta must be > 0, got {self.theta}")

    @property
    def n_nodes(self) -> int:
        return self.thp0.shape[0]

    @property
    def cap(self) -> float:
        """Row budget for outgoing transfers: the system total throughput."""
        return float(math.fsum(self.thp0))


@dataclass(frozen=True)
class SharingResult:
    """Equilibrium transfers with the profile they induce.

    ``restart_spread`` is the largest disagreement between the ex-post
    throughput vectors reached from different starting transfer matrices;
    small spread backs the claim that throughputs are unique even when the
    transfers are not.
    """

    s: np.ndarray
    throughput: np.ndarray
    payoffs: np.ndarray
    converged: bool
    iterations: int
    kkt: float
    restart_spread: float


def _check_feasible(network: SharingNetwork, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    n = network.n_nodes
    if s.shape != (n, n):
        raise InfeasibleSharingError(f"transfer matrix must be ({n}, {n}), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InfeasibleSharingError("transfers must be finite")
    if np.any(s < 0):
        raise InfeasibleSharingError("transfers must be nonnegative")
    if np.any(np.diag(s) != 0):
        raise InfeasibleSharingError("diagonal transfers (self to self) must be zero")
    cap = network.cap
    rows = s.sum(axis=1)
    if np.any(rows > cap * (1.0 + 1e-12) + 1e-12):
        raise InfeasibleSharingError("a row's total transfer exceeds the system capacity")
    return s


def expost_throughput(network: SharingNetwork, s: np.ndarray) -> np.ndarray:
    """Throughputs after transfers: initial plus incoming minus outgoing.

    Each node's net change sums exactly antisymmetric terms, so the system
    total is conserved; compensated summation keeps the bookkeeping at
    roundoff level even on large graphs.
    """
    s = _check_feasible(network, s)
    n = network.n_nodes
    out = np.empty(n)
    for i in range(n):
        delta = math.fsum(float(s[j, i]) - float(s[i, j]) for j in range(n))
        out[i] = network.thp0[i] + delta
    return out


def _marginal(network: SharingNetwork, z: np.ndarray) -> np.ndarray:
    # derivative of -(1/theta) exp(-theta z)
    return np.exp(-network.theta * np.asarray(z, dtype=float))


def sharing_payoffs(network: SharingNetwork, s: np.ndarray) -> np.ndarray:
    """Per-node payoff: own utility plus altruism-weighted neighbor utilities."""
    thp = expost_throughput(network, s)
    util = -(1.0 / network.theta) * np.exp(-network.theta * thp)
    return util + network.eps @ util


def kkt_residual(network: SharingNetwork, s: np.ndarray, active_tol: float = 1e-9) -> float:
    """Worst stationarity gap over strictly used edges.

    On an edge carrying transfer, the giver's marginal utility must equal the
    altruism weight times the receiver's; the residual is the largest
    absolute mismatch, zero when no edge is active.
    """
    s = _check_feasible(network, s)
    thp = expost_throughput(network, s)
    mu = _marginal(network, thp)
    worst = 0.0
    n = network.n_nodes
    for i in range(n):
        for j in range(n):
            if network.eps[i, j] > 0 and s[i, j] > active_tol:
                worst = max(worst, abs(mu[i] - network.eps[i, j] * mu[j]))
    return worst


def _node_ascent(
    network: SharingNetwork, s: np.ndarray, i: int, inner_tol: float = 1e-10
) -> None:
    """Maximize node ``i``'s payoff over its outgoing transfers, in place.

    Exponential utilities give each coordinate a closed-form unconstrained
    maximizer; cycling through coordinates with projection onto the box and
    the row budget converges for this strictly concave subproblem.
    """
    out_edges = np.nonzero(network.eps[i] > 0)[0]
    s[i, :] = np.where(network.eps[i] > 0, s[i, :], 0.0)
    if out_edges.size == 0:
        s[i, :] = 0.0
        return
    theta, cap = network.theta, network.cap
    incoming_i = math.fsum(float(s[j, i]) for j in range(network.n_nodes)) - float(s[i, i])
    b_i = float(network.thp0[i]) + incoming_i
    # receiver throughputs with node i's gifts removed
    base = expost_throughput(network, s)
    c_recv = {int(j): float(base[j] - s[i, j]) for j in out_edges}
    for _ in range(10_000):
        biggest = 0.0
        for j in out_edges:
            j = int(j)
            row_sum = float(s[i].sum())
            s_minus = row_sum - float(s[i, j])
            raw = 0.5 * (b_i - s_minus - c_recv[j] + math.log(network.eps[i, j]) / theta)
            new = min(max(raw, 0.0), cap - s_minus)
            biggest = max(biggest, abs(new - float(s[i, j])))
            s[i, j] = new
        if biggest < inner_tol:
            return
    raise ConfigError("coordinate ascent failed to settle; utilities may be too flat")


def sharing_equilibrium(
    network: SharingNetwork,
    iters: int = 500,
    tol: float = 1e-10,
    restarts: int = 5,
    stream: RandomStream | None = None,
) -> SharingResult:
    """Equilibrium transfers by round-robin best responses.

    Nodes take turns re-solving their concave giving problem against the
    current matrix until no entry moves more than ``tol``; hitting ``iters``
    first is reported through the ``converged`` flag rather than an error.
    The run from the all-zero matrix is returned; ``restarts - 1`` additional
    runs from random feasible matrices only feed ``restart_spread``.
    """
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    if restarts < 1:
        raise ConfigError(f"restarts must be >= 1, got {restarts}")
    rng = (stream or RandomStream(0)).generator()
    n = network.n_nodes

    def solve(s0: np.ndarray) -> tuple[np.ndarray, bool, int]:
        s = s0.copy()
        for sweep in range(1, iters + 1):
            before = s.copy()
            for i in range(n):
                _node_ascent(network, s, i)
            if np.max(np.abs(s - before)) < tol:
                return s, True, sweep
        return s, False, iters

    starts = [np.zeros((n, n))]
    for _ in range(restarts - 1):
        raw = rng.uniform(0.0, 1.0, size=(n, n)) * (network.eps > 0)
        np.fill_diagonal(raw, 0.0)
        rows = raw.sum(axis=1, keepdims=True)
        budget = np.minimum(network.thp0, network.cap)[:, None]
        scale = np.where(rows > 0, budget / np.maximum(rows, 1e-300), 0.0)
        starts.append(raw * np.minimum(scale, 1.0))

    solutions = [solve(s0) for s0 in starts]
    throughputs = [expost_throughput(network, s) for s, _, _ in solutions]
    spread = 0.0
    for t in throughputs[1:]:
        spread = max(spread, float(np.max(np.abs(t - throughputs[0]))))
    s_star, converged, sweeps = solutions[0]
    converged = converged and all(ok for _, ok, _ in solutions)
    return SharingResult(
        s=s_star,
        throughput=throughputs[0],
        payoffs=sharing_payoffs(network, s_star),
        converged=converged,
        iterations=sweeps,
        kkt=kkt_residual(network, s_star),
        restart_spread=spread,
    )
