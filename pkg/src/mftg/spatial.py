"""Spatial arrival games: meeting-time tradeoffs and congested evacuation.

An agent walks through the plane toward a meeting room at a kinetic cost and
pays for arriving later than the schedule, later than the actual start, or
earlier than the actual start (waiting).  The start time itself is endogenous:
the meeting begins at the first instant, at or after the schedule, when a
quorum is seated.  Because the per-arrival cost is piecewise linear, best
responses have closed forms regime by regime, the value function is explicit,
and the start time solves a scalar fixed-point problem.

The module also checks two classical facts reused by those formulas: that
linear and cone-shaped functions solve the unit Eikonal equation, and that
the congested-evacuation Hamiltonian with kinetic weight ``c1(G)`` and
discomfort ``c2(G)`` is maximized by the feedback control ``p / (2 c1(G))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import as_time_function
from .errors import (
    ConfigError,
    NegativeSlopeError,
    VertexSampleError,
    ZeroDenominatorError,
)

__all__ = [
    "ArrivalPlan",
    "EvacControl",
    "MeetingModel",
    "REGIMES",
    "StartTimeResult",
    "eikonal_residual",
    "evac_hamiltonian",
    "meeting_cost",
    "meeting_value",
    "optimal_arrival",
    "regime_slope",
    "start_time_fixed_point",
]

# Arrival regimes relative to the schedule t_bar and the actual start T.
REGIMES = ("early", "between", "late")

_KINK_TOL = 1e-9


def _as_point(x, name: str) -> np.ndarray:
    pt = np.asarray(x, dtype=float)
    if pt.shape != (2,):
        raise ConfigError(f"{name} must be a 2-vector, got shape {pt.shape}")
    if not np.all(np.isfinite(pt)):
        raise ConfigError(f"{name} must be finite")
    return pt


@dataclass(frozen=True, eq=False)
class MeetingModel:
    """Meeting at a fixed room, with a scheduled time and a quorum rule.

    The arrival cost is ``c1 [t_h - t_bar]_+ + c2 [t_h - T]_+ + c3 [T - t_h]_+``
    where ``T`` is the actual start: lateness against the schedule, lateness
    against the start, and waiting are billed separately.  The start is the
    first instant at or after ``t_bar`` when at least ``quorum`` agents are
    seated.

    ``congestion`` scales the kinetic term; it is constant across the room,
    so it cancels out of every best response and is kept only as part of the
    scenario description.
    """

    x_room: np.ndarray
    c1: float
    c2: float
    c3: float
    t_bar: float
    quorum: int
    positions: np.ndarray
    congestion: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_room", _as_point(self.x_room, "x_room"))
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ConfigError(f"positions must be (n, 2) with n >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ConfigError("positions must be finite")
        for name in ("c1", "c2", "c3", "t_bar", "congestion"):
            val = float(getattr(self, name))
            object.__setattr__(self, name, val)
            if not math.isfinite(val):
                raise ConfigError(f"{name} must be finite")
        if min(self.c1, self.c2, self.c3) < 0:
            raise ConfigError("cost coefficients c1, c2, c3 must be nonnegative")
        if self.t_bar < 0:
            raise ConfigError(f"scheduled time must be nonnegative, got {self.t_bar}")
        if self.congestion <= 0:
            raise ConfigError(f"congestion factor must be positive, got {self.congestion}")
        if int(self.quorum) != self.quorum:
            raise ConfigError(f"quorum must be an integer, got {self.quorum}")
        object.__setattr__(self, "quorum", int(self.quorum))
        if not 1 <= self.quorum <= pos.shape[0]:
            raise ConfigError(
                f"quorum must be between 1 and the {pos.shape[0]} agents, got {self.quorum}"
            )

    @property
    def n_agents(self) -> int:
        return int(self.positions.shape[0])


def meeting_cost(model: MeetingModel, t_h: float, start_time: float | None = None) -> float:
    """Arrival cost at time ``t_h`` when the meeting starts at ``start_time``.

    ``start_time`` defaults to the schedule ``t_bar`` (an on-time start).
    """
    t_h = float(t_h)
    start = model.t_bar if start_time is None else float(start_time)
    if not math.isfinite(t_h) or t_h < 0:
        raise ConfigError(f"arrival time must be finite and nonnegative, got {t_h}")
    if not math.isfinite(start) or start < model.t_bar - _KINK_TOL:
        raise ConfigError(
            f"start time must be at or after the schedule {model.t_bar}, got {start}"
        )
    return (
        model.c1 * max(t_h - model.t_bar, 0.0)
        + model.c2 * max(t_h - start, 0.0)
        + model.c3 * max(start - t_h, 0.0)
    )


def meeting_value(
    t: float,
    x,
    t_h: float,
    model: MeetingModel,
    slope: float,
    *,
    start_time: float | None = None,
) -> float:
    """Value at time ``t``, position ``x``, of arriving at ``t_h``.

    ``slope`` is the one-sided derivative of the arrival cost in the regime
    the arrival lands in; it must be nonnegative for the arrival to be a
    stationary point.  The value is
    ``-2 sqrt(slope) d(x, room) - 2 (t_h - t) slope - cost(t_h)``.
    """
    slope = float(slope)
    t = float(t)
    t_h = float(t_h)
    if slope < 0:
        raise NegativeSlopeError(
            f"arrival-cost slope must be nonnegative, got {slope}; "
            "postponing is strictly cheaper in this regime"
        )
    if not (math.isfinite(t) and math.isfinite(t_h)):
        raise ConfigError("times must be finite")
    if t > t_h + _KINK_TOL:
        raise ConfigError(f"current time {t} is past the arrival time {t_h}")
    pt = _as_point(x, "x")
    dist = float(np.linalg.norm(pt - model.x_room))
    cost = meeting_cost(model, t_h, start_time)
    return -2.0 * math.sqrt(slope) * dist - 2.0 * (t_h - t) * slope - cost


def regime_slope(model: MeetingModel, regime: str) -> float:
    """One-sided slope of the arrival cost inside the named regime."""
    if regime == "early":
        return -model.c3
    if regime == "between":
        return model.c1 - model.c3
    if regime == "late":
        return model.c1 + model.c2
    raise ConfigError(f"unknown regime {regime!r}, expected one of {REGIMES}")


class ArrivalPlan(NamedTuple):
    """Straight-line arrival policy: hit the room at ``t_h`` at constant ``speed``."""

    t_h: float
    speed: float
    regime: str
    indifferent: bool = False


def optimal_arrival(x0, model: MeetingModel, regime: str) -> ArrivalPlan:
    """Best straight-line arrival from ``x0`` inside the given regime.

    The stationarity condition equates the arrival-cost slope with the squared
    speed, so the agent moves at ``sqrt(slope)`` and arrives after
    ``distance / sqrt(slope)``.  A zero slope leaves the agent indifferent
    (flagged, never arriving when away from the room); a negative slope means
    the regime rewards postponing and has no pinned arrival.
    """
    slope = regime_slope(model, regime)
    if slope < 0:
        raise NegativeSlopeError(
            f"regime {regime!r} has slope {slope}; arriving later is strictly cheaper there"
        )
    pt = _as_point(x0, "x0")
    dist = float(np.linalg.norm(pt - model.x_room))
    if slope == 0.0:
        t_h = 0.0 if dist == 0.0 else math.inf
        return ArrivalPlan(t_h=t_h, speed=0.0, regime=regime, indifferent=True)
    speed = math.sqrt(slope)
    return ArrivalPlan(t_h=dist / speed, speed=speed, regime=regime, indifferent=False)


class StartTimeResult(NamedTuple):
    """Fixed point of the quorum rule: start time, arrivals, and diagnostics."""

    start_time: float
    arrivals: np.ndarray
    regimes: tuple
    converged: bool
    trace: tuple
    iterations: int


def _best_arrival(model: MeetingModel, dist: float, start: float) -> float:
    """Cheapest arrival for one agent at distance ``dist``, start time given.

    Minimizes ``cost(t_h) + dist^2 / t_h`` exactly: the kinetic term always
    pushes later, so the early piece holds no interior minimum and it is
    enough to compare the two kinks with the interior stationary points of
    the middle and late pieces.
    """
    if dist <= 0.0:
        return 0.0

    def total(t_h: float) -> float:
        if t_h <= 0.0:
            return math.inf
        return meeting_cost(model, t_h, start) + dist * dist / t_h

    candidates = [model.t_bar, start]
    mid_slope = model.c1 - model.c3
    if start > model.t_bar and mid_slope > 0.0:
        candidates.append(min(max(dist / math.sqrt(mid_slope), model.t_bar), start))
    late_slope = model.c1 + model.c2
    candidates.append(max(start, dist / math.sqrt(late_slope)))
    return min(candidates, key=lambda t_h: (total(t_h), t_h))


def _label(model: MeetingModel, t_h: float, start: float) -> str:
    """Regime label; a kink arrival takes the side with the smaller slope."""
    if t_h < model.t_bar - _KINK_TOL:
        return "early"
    if t_h <= model.t_bar + _KINK_TOL:
        # early side slopes -c3, between side c1 - c3: early never steeper
        return "early"
    if t_h < start - _KINK_TOL:
        return "between"
    if t_h <= start + _KINK_TOL:
        return "between"  # between side c1 - c3 vs late side c1 + c2
    return "late"


def start_time_fixed_point(
    model: MeetingModel,
    positions=None,
    iters: int = 100,
    *,
    tol: float = 1e-10,
    damping: float = 0.5,
) -> StartTimeResult:
    """Self-consistent start time under the quorum rule.

    Iterates: given a tentative start, every agent picks its cheapest arrival;
    the start is then the first instant at or after the schedule when the
    quorum-th arrival has happened.  The update is damped toward the average
    of old and new to suppress oscillation between early and late regimes.
    Starting from the schedule, the iteration settles on the earliest
    self-consistent start when it converges; ``converged`` is False when the
    iteration budget runs out or the reported point fails its own defining
    condition (the fixed point need not be unique and cycling is possible).
    """
    if positions is None:
        pos = model.positions
    else:
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ConfigError(f"positions must be (n, 2), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ConfigError("positions must be finite")
        if pos.shape[0] < model.quorum:
            raise ConfigError(
                f"quorum {model.quorum} exceeds the {pos.shape[0]} agents present"
            )
    if model.c1 + model.c2 <= 0.0:
        raise ConfigError(
            "late arrivals must cost something (c1 + c2 > 0), "
            "otherwise every agent postpones forever"
        )
    if iters < 0:
        raise ConfigError(f"iteration budget must be nonnegative, got {iters}")
    if not 0.0 < damping <= 1.0:
        raise ConfigError(f"damping must lie in (0, 1], got {damping}")

    dists = np.linalg.norm(pos - model.x_room, axis=1)
    k = model.quorum - 1

    def quorum_start(arrivals: np.ndarray) -> float:
        return max(model.t_bar, float(np.partition(arrivals, k)[k]))

    start = model.t_bar
    trace = [start]
    hit_tol = False
    for _ in range(iters):
        arrivals = np.array([_best_arrival(model, d, start) for d in dists])
        target = quorum_start(arrivals)
        if abs(target - start) <= tol:
            start = target
            trace.append(start)
            hit_tol = True
            break
        start = start + damping * (target - start)
        trace.append(start)

    arrivals = np.array([_best_arrival(model, d, start) for d in dists])
    residual = abs(quorum_start(arrivals) - start)
    converged = hit_tol and residual <= max(1e-8, 10.0 * tol)
    regimes = tuple(_label(model, t_h, start) for t_h in arrivals)
    return StartTimeResult(
        start_time=start,
        arrivals=arrivals,
        regimes=regimes,
        converged=converged,
        trace=tuple(trace),
        iterations=len(trace) - 1,
    )


def eikonal_residual(
    family: str,
    params: dict,
    points,
    *,
    step: float = 1e-6,
    vertex_tol: float = 1e-2,
) -> float:
    """Worst deviation of the central-difference gradient norm from one.

    Two solution families of ``|grad v| = 1`` on the plane are supported:

    - ``"linear"``: ``v(x) = <x, p_star>`` with a unit direction
      ``params["p_star"]``;
    - ``"cone"``: ``v(x) = offset + sign * |x - vertex|`` with
      ``params["vertex"]`` and optional ``offset`` (default 0) and ``sign``
      (default +1).

    Cone samples closer than ``vertex_tol`` to the vertex are rejected: the
    gradient is undefined at the tip and finite differences degrade near it.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ConfigError(f"sample points must be (m, 2) with m >= 1, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ConfigError("sample points must be finite")
    step = float(step)
    if not 0.0 < step < 1.0:
        raise ConfigError(f"finite-difference step must lie in (0, 1), got {step}")
    if not isinstance(params, dict):
        raise ConfigError("params must be a dict of family parameters")

    value: Callable[[np.ndarray], float]
    if family == "linear":
        unknown = set(params) - {"p_star"}
        if unknown or "p_star" not in params:
            raise ConfigError("linear family takes exactly the key 'p_star'")
        p_star = _as_point(params["p_star"], "p_star")
        norm = float(np.linalg.norm(p_star))
        if abs(norm - 1.0) > 1e-9:
            raise ConfigError(f"p_star must be a unit vector, got norm {norm}")

        def value(x: np.ndarray) -> float:
            return float(x @ p_star)

    elif family == "cone":
        unknown = set(params) - {"vertex", "offset", "sign"}
        if unknown or "vertex" not in params:
            raise ConfigError(
                "cone family takes the key 'vertex' plus optional 'offset' and 'sign'"
            )
        vertex = _as_point(params["vertex"], "vertex")
        offset = float(params.get("offset", 0.0))
        sign = float(params.get("sign", 1.0))
        if sign not in (-1.0, 1.0):
            raise ConfigError(f"sign must be +1 or -1, got {sign}")
        dists = np.linalg.norm(pts - vertex, axis=1)
        near = int(np.count_nonzero(dists < vertex_tol))
        if near:
            raise VertexSampleError(
                f"{near} sample(s) within {vertex_tol} of the cone vertex; "
                "the gradient is undefined there"
            )

        def value(x: np.ndarray) -> float:
            return offset + sign * float(np.linalg.norm(x - vertex))

    else:
        raise ConfigError(f"unknown family {family!r}, expected 'linear' or 'cone'")

    worst = 0.0
    for x in pts:
        grad = np.empty(2)
        for axis in range(2):
            bump = np.zeros(2)
            bump[axis] = step
            grad[axis] = (value(x + bump) - value(x - bump)) / (2.0 * step)
        worst = max(worst, abs(float(np.linalg.norm(grad)) - 1.0))
    return worst


class EvacControl(NamedTuple):
    """Optimized Hamiltonian value and the feedback control that attains it."""

    hamiltonian: float
    control: np.ndarray


def evac_hamiltonian(p, G: float, c1, c2) -> EvacControl:
    """Evacuation Hamiltonian ``|p|^2 / (4 c1(G)) - c2(G)`` and its maximizer.

    ``p`` is the adjoint vector, ``G`` the local crowd density around the
    agent, ``c1`` the kinetic congestion weight and ``c2`` the standing
    discomfort; both may be scalars or callables of the density.  The
    reported control ``p / (2 c1(G))`` attains the supremum of
    ``-c1(G) |u|^2 - c2(G) + <p, u>`` over controls ``u``.
    """
    pvec = np.asarray(p, dtype=float)
    if pvec.ndim != 1 or pvec.size < 1:
        raise ConfigError(f"adjoint p must be a 1-d vector, got shape {pvec.shape}")
    if not np.all(np.isfinite(pvec)):
        raise ConfigError("adjoint p must be finite")
    G = float(G)
    if not math.isfinite(G) or G < 0:
        raise ConfigError(f"density must be finite and nonnegative, got {G}")
    kinetic = float(as_time_function(c1)(G))
    discomfort = float(as_time_function(c2)(G))
    if not (math.isfinite(kinetic) and math.isfinite(discomfort)):
        raise ConfigError("c1(G) and c2(G) must be finite")
    if kinetic <= 0.0:
        raise ZeroDenominatorError(
            f"kinetic weight c1(G)={kinetic} must be positive to invert the Hamiltonian"
        )
    hamiltonian = float(pvec @ pvec) / (4.0 * kinetic) - discomfort
    control = pvec / (2.0 * kinetic)
    return EvacControl(hamiltonian=hamiltonian, control=control)
