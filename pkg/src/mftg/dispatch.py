"""Power dispatch across capped plants against a convex mismatch loss.

A producer runs ``K`` plants feeding a common demand ``D``.  Supplying at
rates ``s_k`` costs ``l(D - sum_k s_k) + (rho/2) sum_k s_k^2`` per unit time
while each stock evolves as ``de_k/dt = c_k - s_k`` (maintenance inflow minus
production).  The pointwise optimality system reduces to one scalar root for
the total supply, an explicit per-plant allocation with caps, and a value
function available in closed variational form

    v(t, e) = inf_y { l_T(y) + (T - t) Hstar(D, (e - y) / (T - t)) },

the infimum running over candidate terminal stocks ``y``.  ``Hstar`` is the
running cost written in stock-velocity variables (see
:func:`legendre_Hstar`), evaluated here on a refined grid.  A damped
fixed-point iteration couples several producers to a demand response.

Caps and nonnegativity are honored by clamping in :func:`optimal_supply`;
the Hamiltonian, transform, and value evaluation work in the interior
(unconstrained) regime, which is exact whenever no clamp binds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import as_time_function, bracketed_root
from .errors import ConfigError, GridTooCoarseError, NonFiniteError

__all__ = [
    "ProducerModel",
    "SupplyResult",
    "HopfLaxResult",
    "FixedPointResult",
    "make_loss",
    "quadratic_terminal",
    "active_plants",
    "demand_at",
    "total_supply_root",
    "optimal_supply",
    "hamiltonian",
    "legendre_Hstar",
    "hopf_lax_value",
    "hopf_lax_costate",
    "supply_demand_fixed_point",
]

CoeffSpec = float | Callable[[float], float] | Sequence[float | Callable[[float], float]]


def _per_plant_fns(spec: CoeffSpec, k: int, name: str) -> list[Callable[[float], float]]:
    if np.ndim(spec) == 0 and not isinstance(spec, Sequence):
        return [as_time_function(spec)] * k
    if callable(spec):
        return [as_time_function(spec)] * k
    items = list(spec)
    if len(items) != k:
        raise ConfigError(f"{name}: expected {k} per-plant entries, got {len(items)}")
    return [as_time_function(s) for s in items]


def make_loss(kind: str, **params: float) -> tuple[Callable, Callable]:
    """Return a ``(loss, derivative)`` pair of a named convex family.

    ``"quadratic"`` takes ``weight`` (default 1) and gives ``w z^2 / 2``.
    ``"huber"`` takes ``delta`` and ``weight`` and is quadratic inside
    ``[-delta, delta]`` with linear tails; note the tails have zero
    curvature, so instances must keep the mismatch range inside the
    quadratic region to pass the strict-convexity gate.
    """
    if kind == "quadratic":
        w = float(params.pop("weight", 1.0))
        if params:
            raise ConfigError(f"quadratic loss got unknown parameters {sorted(params)}")
        if not (math.isfinite(w) and w > 0.0):
            raise ConfigError(f"weight must be positive, got {w}")
        return (lambda z: 0.5 * w * np.square(z), lambda z: w * np.asarray(z, dtype=float))
    if kind == "huber":
        delta = float(params.pop("delta", 1.0))
        w = float(params.pop("weight", 1.0))
        if params:
            raise ConfigError(f"huber loss got unknown parameters {sorted(params)}")
        if not (delta > 0.0 and w > 0.0):
            raise ConfigError(f"delta and weight must be positive, got {delta}, {w}")

        def loss(z):
            z = np.asarray(z, dtype=float)
            small = np.abs(z) <= delta
            return w * np.where(small, 0.5 * z * z, delta * (np.abs(z) - 0.5 * delta))

        def loss_prime(z):
            return w * np.clip(np.asarray(z, dtype=float), -delta, delta)

        return loss, loss_prime
    raise ConfigError(f"unknown loss kind {kind!r}; use quadratic or huber")


def quadratic_terminal(
    weights: np.ndarray | float, anchor: np.ndarray | float = 0.0
) -> Callable[[np.ndarray], np.ndarray]:
    """Terminal loss ``0.5 sum_k w_k (y_k - anchor_k)^2`` on stock vectors.

    The returned callable follows the terminal-loss contract: it accepts
    arrays of shape ``(..., K)`` and reduces the last axis.
    """
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    a = np.asarray(anchor, dtype=float)
    if np.min(w) < 0.0:
        raise ConfigError("terminal weights must be nonnegative")

    def terminal(y: np.ndarray) -> np.ndarray:
        return (0.5 * w * np.square(np.asarray(y, dtype=float) - a)).sum(axis=-1)

    return terminal


@dataclass(frozen=True)
class ProducerModel:
    """One producer's plants, loss, and horizon.

    ``loss`` and ``loss_prime`` map mismatch ``z = D - S`` to cost and
    marginal cost; both must accept numpy arrays.  ``caps`` are per-plant
    supply ceilings.  ``maintenance`` gives the stock inflow rates ``c_k(t)``
    (scalar, callable, or one per plant), and ``maintenance_windows`` lists
    ``(plant, start, end)`` intervals during which a plant cannot produce.
    ``terminal_loss`` maps stock arrays of shape ``(..., K)`` to shape
    ``(...)`` and is required by the value-function routines.
    """

    loss: Callable
    loss_prime: Callable
    caps: np.ndarray
    rho: float
    maintenance: CoeffSpec = 0.0
    terminal_loss: Callable | None = None
    demand: float | Callable[[float], float] = 0.0
    horizon: float = 1.0
    maintenance_windows: tuple[tuple[int, float, float], ...] = ()

    def __post_init__(self) -> None:
        caps = np.atleast_1d(np.asarray(self.caps, dtype=float))
        if caps.ndim != 1 or caps.size == 0:
            raise ConfigError("caps must be a non-empty vector")
        if not np.all(np.isfinite(caps)) or np.min(caps) <= 0.0:
            raise ConfigError("caps must be positive and finite")
        if not (math.isfinite(self.rho) and self.rho > 0.0):
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if not (math.isfinite(self.horizon) and self.horizon > 0.0):
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if not (callable(self.loss) and callable(self.loss_prime)):
            raise ConfigError("loss and loss_prime must be callable")
        for win in self.maintenance_windows:
            plant, start, end = win
            if not 0 <= int(plant) < caps.size:
                raise ConfigError(f"maintenance window {win} names a missing plant")
            if not start < end:
                raise ConfigError(f"maintenance window {win} is not an interval")
        object.__setattr__(self, "caps", caps)
        # cheap consistency probe: the stated derivative must match the loss
        for z in (-1.3, 0.4, 2.2):
            step = 1e-5 * max(1.0, abs(z))
            fd = (float(self.loss(z + step)) - float(self.loss(z - step))) / (2 * step)
            if abs(fd - float(self.loss_prime(z))) > 1e-4 * max(1.0, abs(fd)):
                raise ConfigError(f"loss_prime disagrees with loss near z={z}")

    @property
    def n_plants(self) -> int:
        return self.caps.size

    def maintenance_fns(self) -> list[Callable[[float], float]]:
        return _per_plant_fns(self.maintenance, self.n_plants, "maintenance")

    def maintenance_at(self, t: float) -> np.ndarray:
        c = np.array([fn(t) for fn in self.maintenance_fns()], dtype=float)
        if not np.all(np.isfinite(c)) or np.min(c) < 0.0:
            raise ConfigError(f"maintenance rates must be nonnegative, got {c} at t={t}")
        return c


def demand_at(model: ProducerModel, t: float) -> float:
    d = float(as_time_function(model.demand)(t))
    if not math.isfinite(d) or d < 0.0:
        raise ConfigError(f"demand must be nonnegative, got {d} at t={t}")
    return d


def active_plants(model: ProducerModel, t: float) -> np.ndarray:
    """Boolean availability mask at time ``t``; windows are closed-open."""
    mask = np.ones(model.n_plants, dtype=bool)
    for plant, start, end in model.maintenance_windows:
        if start <= t < end:
            mask[int(plant)] = False
    return mask


def _check_strictly_convex(model: ProducerModel, lo: float, hi: float) -> None:
    # sampled second differences must be positive over the mismatch range
    if hi <= lo:
        hi = lo + 1.0
    for z in np.linspace(lo, hi, 65):
        step = 1e-4 * max(1.0, abs(z))
        curv = (
            float(model.loss(z + step))
            - 2.0 * float(model.loss(z))
            + float(model.loss(z - step))
        ) / (step * step)
        if not curv > 0.0:
            raise ConfigError(
                f"loss is not strictly convex on [{lo:.3g}, {hi:.3g}] (curvature {curv:.3g} at z={z:.3g})"
            )


def _as_costate(y: np.ndarray | float, k: int) -> np.ndarray:
    y = np.broadcast_to(np.asarray(y, dtype=float), (k,)).copy()
    if not np.all(np.isfinite(y)):
        raise ConfigError("costate vector contains non-finite entries")
    return y


def total_supply_root(
    model: ProducerModel,
    demand: float,
    costate: np.ndarray | float = 0.0,
    mask: np.ndarray | None = None,
    tol: float = 1e-10,
) -> float:
    """Total production solving the summed stationarity condition.

    The interior optimum of the supply problem satisfies, per active plant,
    ``-l'(D - S) - y_k + rho s_k = 0``; summing gives one increasing scalar
    equation ``-K_a l'(D - S) - sum_k y_k + rho S = 0`` solved here by
    bracketed root search on ``[0, sum(caps) + D]``.  A missing sign change
    means the parameters admit no nonnegative interior total.
    """
    if not (math.isfinite(demand) and demand >= 0.0):
        raise ConfigError(f"demand must be nonnegative, got {demand}")
    y = _as_costate(costate, model.n_plants)
    if mask is None:
        mask = np.ones(model.n_plants, dtype=bool)
    k_active = int(np.count_nonzero(mask))
    if k_active == 0:
        return 0.0
    hi = float(model.caps[mask].sum() + demand)
    _check_strictly_convex(model, demand - hi, demand)
    y_sum = float(y[mask].sum())

    def station(total: float) -> float:
        return -k_active * float(model.loss_prime(demand - total)) - y_sum + model.rho * total

    return bracketed_root(station, 0.0, hi, tol=tol)


@dataclass(frozen=True)
class SupplyResult:
    """Per-plant allocation with clamp bookkeeping.

    ``total`` is the interior root the allocation was built from; the sum of
    ``supply`` equals it exactly when no cap, nonnegativity clamp, or
    maintenance mask binds.
    """

    supply: np.ndarray
    total: float
    capped: np.ndarray
    clamped: np.ndarray
    masked: np.ndarray

    @property
    def any_binding(self) -> bool:
        return bool(self.capped.any() or self.clamped.any() or self.masked.any())


def optimal_supply(
    model: ProducerModel,
    demand: float,
    costate: np.ndarray | float = 0.0,
    mask: np.ndarray | None = None,
) -> SupplyResult:
    """Allocate the total across plants: ``s_k = min(cap_k, (l'(D-S*) + y_k) / rho)``.

    Negative formula values are clamped to zero and flagged rather than
    rejected, since the nonnegativity constraint binds there.
    """
    y = _as_costate(costate, model.n_plants)
    if mask is None:
        mask = np.ones(model.n_plants, dtype=bool)
    total = total_supply_root(model, demand, y, mask=mask)
    marginal = float(model.loss_prime(demand - total))
    raw = (marginal + y) / model.rho
    capped = (raw >= model.caps) & mask
    clamped = (raw < 0.0) & mask
    supply = np.clip(raw, 0.0, model.caps)
    supply[~mask] = 0.0
    return SupplyResult(
        supply=supply,
        total=total,
        capped=capped,
        clamped=clamped,
        masked=~np.asarray(mask, dtype=bool),
    )


def hamiltonian(
    model: ProducerModel,
    demand: float,
    costate: np.ndarray | float,
    t: float = 0.0,
    mask: np.ndarray | None = None,
) -> float:
    """Interior optimized running value ``min_s [l(D-S) + (rho/2)|s|^2 + <c - s, y>]``.

    Uses the unconstrained per-plant optimum (masked plants excepted), so it
    is the smooth Hamiltonian that the value-function machinery differentiates.
    """
    y = _as_costate(costate, model.n_plants)
    if mask is None:
        mask = np.ones(model.n_plants, dtype=bool)
    total = total_supply_root(model, demand, y, mask=mask)
    marginal = float(model.loss_prime(demand - total))
    s = np.where(mask, (marginal + y) / model.rho, 0.0)
    c = model.maintenance_at(t)
    return float(model.loss(demand - total) + 0.5 * model.rho * np.sum(s * s) + np.sum((c - s) * y))


def legendre_Hstar(
    model: ProducerModel, demand: float, a: np.ndarray | float, t: float = 0.0
) -> float:
    """Running cost in stock-velocity variables: the transform under the value formula.

    With stock dynamics ``de_k/dt = c_k - s_k``, a stock moving at velocity
    ``-a_k`` requires supply ``s_k = c_k + a_k``, which costs

        Hstar(D, a) = l(D - sum_k (a_k + c_k)) + (rho/2) sum_k (a_k + c_k)^2.

    This equals the conjugate ``sup_y [<a, y> + H(D, y)]`` of the concave
    Hamiltonian, the object that makes the variational value formula solve
    the dynamic-programming equation (checked against a brute-force
    conjugate and a finite-difference sweep in the test suite).
    """
    if not (math.isfinite(demand) and demand >= 0.0):
        raise ConfigError(f"demand must be nonnegative, got {demand}")
    a = _as_costate(a, model.n_plants)
    s = a + model.maintenance_at(t)
    return float(model.loss(demand - s.sum()) + 0.5 * model.rho * np.sum(s * s))


def _hstar_batch(
    model: ProducerModel, demand: float, a: np.ndarray, c: np.ndarray
) -> np.ndarray:
    # a: (m, K) batch of velocity arguments, c: (K,)
    s = a + c
    return np.asarray(
        model.loss(demand - s.sum(axis=1)) + 0.5 * model.rho * np.sum(s * s, axis=1),
        dtype=float,
    )


@dataclass(frozen=True)
class HopfLaxResult:
    value: float
    y_star: np.ndarray


def hopf_lax_value(
    model: ProducerModel,
    t: float,
    stock: np.ndarray | float,
    demand: float | None = None,
    n_points: int = 101,
    refinements: int = 3,
    y_box: Sequence[tuple[float, float]] | None = None,
) -> HopfLaxResult:
    """Value at ``(t, stock)`` by grid minimization over terminal stocks.

    Evaluates ``inf_y { l_T(y) + (T - t) Hstar(D, (e - y) / (T - t)) }`` on a
    per-dimension grid of ``n_points``, then shrinks the box around the
    argmin ``refinements`` times.  Demand is held at its value at ``t``
    (the representation assumes it constant over the remaining horizon).
    Supports up to 3 plants; the grid grows exponentially with dimension.
    """
    if model.terminal_loss is None:
        raise ConfigError("the model needs a terminal_loss for value evaluation")
    k = model.n_plants
    if k > 3:
        raise ConfigError(f"value grids support at most 3 plants, got {k}")
    if n_points < 5:
        raise ConfigError(f"need at least 5 grid points, got {n_points}")
    horizon = model.horizon
    if not t < horizon:
        raise ConfigError(f"need t < {horizon}, got t={t}")
    remain = horizon - t
    e = np.broadcast_to(np.asarray(stock, dtype=float), (k,)).copy()
    if not np.all(np.isfinite(e)):
        raise ConfigError("stock vector contains non-finite entries")
    d = demand_at(model, t) if demand is None else float(demand)
    if not (math.isfinite(d) and d >= 0.0):
        raise ConfigError(f"demand must be nonnegative, got {d}")
    c = model.maintenance_at(t)

    if y_box is None:
        width = remain * (c + model.caps + d + 1.0) + 1e-3
        los = e - width
        his = e + width
    else:
        if len(y_box) != k:
            raise ConfigError(f"y_box needs {k} (lo, hi) pairs")
        los = np.array([b[0] for b in y_box], dtype=float)
        his = np.array([b[1] for b in y_box], dtype=float)
        if not np.all(his > los):
            raise ConfigError("y_box intervals must have positive width")

    best_val = math.inf
    best_y = e.copy()
    for round_idx in range(refinements + 1):
        axes = [np.linspace(los[i], his[i], n_points) for i in range(k)]
        mesh = np.meshgrid(*axes, indexing="ij")
        ys = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.asarray(model.terminal_loss(ys), dtype=float) + remain * _hstar_batch(
            model, d, (e[None, :] - ys) / remain, c
        )
        if not np.all(np.isfinite(vals)):
            raise NonFiniteError("value grid produced non-finite entries")
        flat = int(np.argmin(vals))
        idx = np.unravel_index(flat, (n_points,) * k)
        if round_idx == 0 and any(i in (0, n_points - 1) for i in idx):
            raise GridTooCoarseError(
                "terminal-stock argmin sits on the search box boundary; widen y_box"
            )
        if vals[flat] < best_val:
            best_val = float(vals[flat])
            best_y = ys[flat].copy()
        # shrink to one cell on each side of the argmin
        steps = (his - los) / (n_points - 1)
        centers = np.array([axes[i][idx[i]] for i in range(k)])
        los = centers - steps
        his = centers + steps
    return HopfLaxResult(value=best_val, y_star=best_y)


def hopf_lax_costate(
    model: ProducerModel,
    t: float,
    stock: np.ndarray | float,
    demand: float | None = None,
    step: float = 1e-4,
    n_points: int = 101,
    refinements: int = 3,
) -> np.ndarray:
    """Stock gradient of the value by central differences, one entry per plant."""
    k = model.n_plants
    e = np.broadcast_to(np.asarray(stock, dtype=float), (k,)).copy()
    grad = np.empty(k)
    for i in range(k):
        h = step * max(1.0, abs(e[i]))
        up = e.copy()
        dn = e.copy()
        up[i] += h
        dn[i] -= h
        v_up = hopf_lax_value(model, t, up, demand, n_points, refinements).value
        v_dn = hopf_lax_value(model, t, dn, demand, n_points, refinements).value
        grad[i] = (v_up - v_dn) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class FixedPointResult:
    supply: float
    demand: float
    converged: bool
    residual: float
    iterations: int


def supply_demand_fixed_point(
    models: Sequence[ProducerModel],
    demand_response: Callable[[float], float],
    costates: Sequence[np.ndarray | float] | None = None,
    damping: float = 1.0,
    max_iter: int = 200,
    tol: float = 1e-8,
    s0: float = 0.0,
) -> FixedPointResult:
    """Damped iteration coupling producers to a demand response.

    Repeats ``S <- (1 - damping) S + damping * sum_j S*_j(D(S))`` until the
    update falls below ``tol``.  Non-convergence within ``max_iter`` is
    reported through the ``converged`` flag and final residual, not raised:
    a broken contraction is an answer, not a crash.
    """
    if not models:
        raise ConfigError("need at least one producer")
    if not 0.0 < damping <= 1.0:
        raise ConfigError(f"damping must be in (0, 1], got {damping}")
    if max_iter < 1:
        raise ConfigError(f"max_iter must be at least 1, got {max_iter}")
    if costates is None:
        costates = [0.0] * len(models)
    if len(costates) != len(models):
        raise ConfigError("need one costate vector per producer")
    supply = float(s0)
    residual = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d = float(demand_response(supply))
        if not math.isfinite(d):
            raise NonFiniteError(f"demand response produced {d} at S={supply}")
        total = sum(
            total_supply_root(m, d, y) for m, y in zip(models, costates)
        )
        new_supply = (1.0 - damping) * supply + damping * total
        residual = abs(new_supply - supply)
        supply = new_supply
        if residual < tol:
            return FixedPointResult(
                supply=supply,
                demand=float(demand_response(supply)),
                converged=True,
                residual=residual,
                iterations=iterations,
            )
    return FixedPointResult(
        supply=supply,
        demand=float(demand_response(supply)),
        converged=False,
        residual=residual,
        iterations=iterations,
    )
