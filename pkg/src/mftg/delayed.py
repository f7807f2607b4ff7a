"""Delayed-state prosumer market: advanced-argument adjoint and equilibrium.

A prosumer's stored energy follows a scalar SDE whose drift and noise load on
the state one delay ``tau`` in the past.  With a linear terminal reward the
market costate ``p`` is deterministic and solves an ODE whose right-hand side
looks ``tau`` ahead, so it is built backward one delay interval at a time:
constant on the final interval, then each earlier interval integrates against
the already-known future segment.  The costate prices consumption; the
equilibrium consumption rate is the fixed point of a scalar quadratic.

Longer delays flatten the costate toward its terminal value, which lowers the
price and raises equilibrium consumption.  ``delay_monotonicity_report``
verifies that ordering on a grid of delays.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .core import Path, RandomStream, TimeGrid, as_time_function
from .errors import (
    ConfigError,
    DelayNotOnGridError,
    MFTGError,
    MonotonicityViolationError,
    NonFiniteError,
    NonpositiveCostateError,
)

__all__ = [
    "AdjointPath",
    "DelayedProsumerModel",
    "DelayReport",
    "ProsumerSimResult",
    "adjoint_backward_stepping",
    "delay_monotonicity_report",
    "equilibrium_consumption",
    "mean_field_fixed_point",
    "optimal_control",
    "prosumer_closed_form_p",
    "simulate_prosumer",
]

TimeFn = float | Callable[[float], float]


@dataclass(frozen=True)
class DelayedProsumerModel:
    """Scalar energy dynamics with one lagged state argument.

    ``de = (c1(t) e(t - tau) - u(t)) dt + c2(t) e(t - tau) dW``, started from
    the deterministic ``history`` on ``[-tau, 0]``.  The terminal reward is
    linear with slope ``c4``, and ``mu`` couples an agent's satisfaction to
    the population's mean consumption.  The jump channel is carried as the
    zero-valued field ``c3``; nonzero jumps are not supported.
    """

    c1: TimeFn
    c2: TimeFn
    c4: float
    tau: float
    horizon: float
    mu: float
    history: TimeFn = 1.0
    c3: float = 0.0

    def __post_init__(self) -> None:
        for name in ("c4", "tau", "horizon", "mu", "c3"):
            val = float(getattr(self, name))
            object.__setattr__(self, name, val)
            if not math.isfinite(val):
                raise ConfigError(f"{name} must be finite, got {val}")
        if self.c3 != 0.0:
            raise ConfigError("jump channel is disabled; c3 must be 0")
        if self.c4 < 0:
            raise ConfigError(f"terminal slope c4 must be >= 0, got {self.c4}")
        if self.tau <= 0:
            raise ConfigError(f"delay tau must be > 0, got {self.tau}")
        if self.horizon < self.tau:
            raise ConfigError(
                f"horizon {self.horizon} shorter than the delay {self.tau}"
            )
        if self.mu <= 0:
            raise ConfigError(f"satisfaction coupling mu must be > 0, got {self.mu}")
        # probe the coefficient functions where the solver will evaluate them
        c1f, c2f, histf = self.c1_fn(), self.c2_fn(), self.history_fn()
        for t in (0.0, 0.5 * self.horizon, self.horizon):
            if not (math.isfinite(float(c1f(t))) and math.isfinite(float(c2f(t)))):
                raise ConfigError(f"coefficients must be finite on [0, T]; bad at t={t}")
        for t in (-self.tau, -0.5 * self.tau, 0.0):
            if not math.isfinite(float(histf(t))):
                raise ConfigError(f"history must be finite on [-tau, 0]; bad at t={t}")

    def c1_fn(self) -> Callable[[float], float]:
        return as_time_function(self.c1)

    def c2_fn(self) -> Callable[[float], float]:
        return as_time_function(self.c2)

    def history_fn(self) -> Callable[[float], float]:
        return as_time_function(self.history)


@dataclass(frozen=True)
class AdjointPath:
    """Deterministic costate on a grid.

    With deterministic coefficients the martingale parts of the adjoint
    vanish, recorded by the ``q_is_zero`` / ``rbar_is_zero`` markers.  ``p``
    is piecewise smooth; its derivative may kink only at the times listed in
    ``kinks`` (the terminal time minus whole multiples of the delay).
    """

    p: Path
    kinks: tuple[float, ...]
    q_is_zero: bool = True
    rbar_is_zero: bool = True


@dataclass(frozen=True)
class DelayReport:
    """Costate and consumption profiles across a family of delays.

    Row ``i`` of each array corresponds to ``taus[i]``.  ``degenerate_equality``
    flags a pair of delays whose costates coincide everywhere (no growth in the
    lagged drift), in which case the strict part of the ordering is vacuous.
    """

    taus: tuple[float, ...]
    times: np.ndarray
    costate: np.ndarray
    control: np.ndarray
    mean_action: np.ndarray
    degenerate_equality: bool


@dataclass(frozen=True)
class ProsumerSimResult:
    """Closed-loop ensemble: raw paths plus first two moments."""

    paths: np.ndarray
    mean: Path
    var: Path
    control: Path


def _delay_steps(model: DelayedProsumerModel, grid: TimeGrid, tau: float | None = None) -> int:
    """Validate grid span and delay alignment; return the delay in steps."""
    t = model.tau if tau is None else tau
    if abs(grid.t0) > 1e-12 or abs(grid.t1 - model.horizon) > 1e-9 * max(1.0, model.horizon):
        raise ConfigError(
            f"grid [{grid.t0}, {grid.t1}] must span [0, {model.horizon}]"
        )
    ratio = t / grid.h
    d = round(ratio)
    if d < 1 or abs(ratio - d) > 1e-9 * max(1.0, ratio):
        raise DelayNotOnGridError(
            f"tau={t} is not a positive whole number of steps of h={grid.h}"
        )
    if d > grid.n_steps:
        raise ConfigError(f"delay tau={t} exceeds the horizon {model.horizon}")
    return int(d)


def adjoint_backward_stepping(model: DelayedProsumerModel, grid: TimeGrid) -> AdjointPath:
    """Build the costate backward, one delay interval at a time.

    On the final interval ``[T - tau, T]`` the costate is the constant
    terminal slope.  Earlier, ``dp/dt = -c1(t + tau) p(t + tau)`` reads the
    segment one delay ahead, already known when stepping backward, so each
    step is a Simpson quadrature of the advanced integrand.  The midpoint
    value of ``p`` comes from a cubic Hermite fit with one-sided slopes, which
    keeps full accuracy at the terminal kink.  Continuity at interval joints
    is automatic because the nodes are shared.
    """
    d = _delay_steps(model, grid)
    n, h = grid.n_steps, grid.h
    ts = grid.times()
    c1f = model.c1_fn()
    c1_nodes = np.array([float(c1f(t)) for t in ts])
    c1_mid = np.array([float(c1f(t + 0.5 * h)) for t in ts[:-1]])
    if not (np.all(np.isfinite(c1_nodes)) and np.all(np.isfinite(c1_mid))):
        raise NonFiniteError("c1 produced non-finite values on the grid")

    p = np.empty(n + 1)
    p[n - d :] = model.c4
    for j in range(n - d - 1, -1, -1):
        k = j + d  # integrand g(s) = c1(s + tau) p(s + tau) sampled at index s/h + d
        g0 = c1_nodes[k] * p[k]
        g1 = c1_nodes[k + 1] * p[k + 1]
        if k >= n - d:
            pm = model.c4  # advanced segment lies in the terminal flat interval
        else:
            # slopes of p at the advanced nodes; at the terminal kink this
            # picks the left-sided derivative, matching the segment being fit
            m0 = -c1_nodes[k + d] * p[k + d]
            m1 = -c1_nodes[k + 1 + d] * p[k + 1 + d]
            pm = 0.5 * (p[k] + p[k + 1]) + 0.125 * h * (m0 - m1)
        p[j] = p[j + 1] + (h / 6.0) * (g0 + 4.0 * c1_mid[k] * pm + g1)
        if not math.isfinite(p[j]):
            raise NonFiniteError("costate overflowed during backward stepping")

    kinks = []
    k = 1
    while model.horizon - k * model.tau > 1e-12:
        kinks.append(model.horizon - k * model.tau)
        k += 1
    return AdjointPath(p=Path(grid, p), kinks=tuple(sorted(kinks)))


def _trap(fvals: np.ndarray, dx: float) -> float:
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(fvals, dx=dx))


def prosumer_closed_form_p(model: DelayedProsumerModel, t: float, n_panels: int = 8192) -> float:
    """Costate by direct quadrature, valid on the last three delay intervals.

    Backward from the terminal time: constant ``c4`` first, then
    ``c4 (1 + int_{t+tau}^T c1)``, then one more layer of the recursion with
    the previous branch under the integral.  Each integral is a trapezoid rule
    on ``n_panels`` panels; the nested branch aligns its inner and outer
    meshes so the delay shift lands exactly on nodes.
    """
    T, tau, c4 = model.horizon, model.tau, model.c4
    tol = 1e-9 * max(1.0, T)
    if t < -tol or t > T + tol:
        raise ConfigError(f"t={t} outside [0, {T}]")
    if n_panels < 1:
        raise ConfigError("n_panels must be >= 1")
    if t >= T - tau - tol:
        return c4
    c1f = model.c1_fn()
    if t >= T - 2.0 * tau - tol:
        xs = np.linspace(t + tau, T, n_panels + 1)
        vals = np.array([float(c1f(x)) for x in xs])
        return c4 * (1.0 + _trap(vals, xs[1] - xs[0]))
    if t < T - 3.0 * tau - tol:
        raise ConfigError(
            f"closed form covers [{T - 3.0 * tau}, {T}] (three delay intervals); got t={t}"
        )
    # third interval: p(t) = p(T - 2 tau) + int_{t+tau}^{T-tau} c1(s) p2(s) ds
    # where p2 is the second-interval branch.  The inner integrals
    # int_{s+tau}^{T} c1 are shared through one cumulative pass on a mesh
    # shifted by exactly tau from the outer one.
    outer = np.linspace(t + tau, T - tau, n_panels + 1)
    inner = outer + tau
    c1_inner = np.array([float(c1f(x)) for x in inner])
    dx_in = inner[1] - inner[0]
    # cumulative trapezoid of c1 from inner[0]; the inner mesh ends at T
    # exactly (outer ends at T - tau), so the tail to T is the complement
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (c1_inner[1:] + c1_inner[:-1]) * dx_in)))
    p2_outer = c4 * (1.0 + (cum[-1] - cum))
    c1_outer = np.array([float(c1f(x)) for x in outer])
    p_join = c4 * (
        1.0
        + _trap(
            np.array([float(c1f(x)) for x in np.linspace(T - tau, T, n_panels + 1)]),
            tau / n_panels,
        )
    )
    return float(p_join + _trap(c1_outer * p2_outer, outer[1] - outer[0]))


def optimal_control(p, m2_bar, mu: float):
    """Best-response consumption at costate ``p`` and mean action ``m2_bar``.

    ``-log(p) / (1 + mu * m2_bar)`` while the costate sits in ``(0, 1]``; a
    costate above one prices consumption out entirely and the control is zero.

    Scalars map to scalars, arrays map elementwise.
    """
    if mu < 0:
        raise ConfigError(f"mu must be >= 0, got {mu}")
    p_arr = np.asarray(p, dtype=float)
    m2_arr = np.asarray(m2_bar, dtype=float)
    if np.any(p_arr <= 0):
        raise NonpositiveCostateError("costate must be positive to price consumption")
    if np.any(m2_arr < 0):
        raise ConfigError("mean action must be nonnegative")
    u = np.where(p_arr > 1.0, 0.0, -np.log(np.minimum(p_arr, 1.0)) / (1.0 + mu * m2_arr))
    return float(u) if np.ndim(p) == 0 and np.ndim(m2_bar) == 0 else u


def mean_field_fixed_point(p, mu: float):
    """Mean consumption consistent with everyone best-responding to it.

    The nonnegative root of ``m (1 + mu m) = log(1/p)``, written in the
    cancellation-free form ``2 L / (1 + sqrt(1 + 4 mu L))`` and polished by a
    Newton step if roundoff leaves a residual above 1e-12.

    Scalars map to scalars, arrays map elementwise.
    """
    if mu <= 0:
        raise ConfigError(f"mu must be > 0, got {mu}")
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0):
        raise NonpositiveCostateError("costate must be positive")
    if np.any(p_arr > 1.0 + 1e-15):
        raise ConfigError("costate above 1 is outside the consumption regime (0, 1]")
    big_l = -np.log(np.minimum(p_arr, 1.0))
    m2 = 2.0 * big_l / (1.0 + np.sqrt(1.0 + 4.0 * mu * big_l))
    resid = np.abs(m2 * (1.0 + mu * m2) - big_l)
    bad = resid > 1e-12
    if np.any(bad):
        m2 = np.where(
            bad, m2 - (m2 * (1.0 + mu * m2) - big_l) / (1.0 + 2.0 * mu * m2), m2
        )
        if np.any(np.abs(m2 * (1.0 + mu * m2) - big_l) > 1e-12):
            raise MFTGError("fixed-point residual failed to reach 1e-12")
    return float(m2) if np.ndim(p) == 0 else m2


def equilibrium_consumption(
    model: DelayedProsumerModel, grid: TimeGrid
) -> tuple[AdjointPath, Path, Path]:
    """Costate, control, and mean action on the grid, mutually consistent.

    Wherever the costate exceeds one the control is zero and so is the mean
    action; elsewhere the mean action solves the pointwise fixed point, and
    the best response evaluated at it reproduces it.
    """
    adj = adjoint_backward_stepping(model, grid)
    p = adj.p.values
    if np.any(p <= 0):
        raise NonpositiveCostateError("costate hit zero; terminal slope must be positive")
    active = p <= 1.0
    m2 = np.zeros_like(p)
    if np.any(active):
        m2[active] = np.asarray(mean_field_fixed_point(p[active], model.mu))
    u = optimal_control(p, m2, model.mu)
    return adj, Path(grid, np.asarray(u)), Path(grid, m2)


def delay_monotonicity_report(
    model: DelayedProsumerModel, tau_list, grid: TimeGrid
) -> DelayReport:
    """Costate and consumption across delays, with the ordering verified.

    A longer delay freezes the costate at its terminal slope over a longer
    final stretch, so with a nonnegative lagged drift it can only lower the
    costate, and hence raise equilibrium consumption, at every time.  Any
    crossing beyond 1e-10 raises; profiles that coincide everywhere (zero
    drift) are reported as degenerate equality rather than an error.
    """
    taus = tuple(float(t) for t in tau_list)
    if len(taus) == 0:
        raise ConfigError("need at least one delay value")
    n = grid.n_steps
    costate = np.empty((len(taus), n + 1))
    control = np.empty_like(costate)
    mean_action = np.empty_like(costate)
    for i, tau in enumerate(taus):
        _delay_steps(model, grid, tau=tau)  # grid alignment, tau <= T
        variant = dataclasses.replace(model, tau=tau)
        adj, u, m2 = equilibrium_consumption(variant, grid)
        costate[i] = adj.p.values
        control[i] = u.values
        mean_action[i] = m2.values

    tol = 1e-10
    degenerate = False
    times = grid.times()
    order = np.argsort(taus)
    for a_pos in range(len(order)):
        for b_pos in range(a_pos + 1, len(order)):
            a, b = order[a_pos], order[b_pos]
            if taus[a] == taus[b]:
                continue
            gap_p = costate[a] - costate[b]  # shorter delay keeps the costate higher
            gap_u = control[b] - control[a]
            if np.any(gap_p < -tol) or np.any(gap_u < -tol):
                worst = float(min(gap_p.min(), gap_u.min()))
                raise MonotonicityViolationError(
                    f"delay ordering broke between tau={taus[a]} and tau={taus[b]} "
                    f"(worst gap {worst:.3e})"
                )
            before_flat = times < model.horizon - taus[a] - 1e-12
            if not np.any(gap_p[before_flat] > tol):
                degenerate = True
    return DelayReport(
        taus=taus,
        times=times,
        costate=costate,
        control=control,
        mean_action=mean_action,
        degenerate_equality=degenerate,
    )


def simulate_prosumer(
    model: DelayedProsumerModel,
    control,
    grid: TimeGrid,
    stream: RandomStream,
    n_paths: int = 64,
) -> ProsumerSimResult:
    """Milstein ensemble of energy paths under a deterministic control.

    ``control`` is a constant, a callable of time, an array on the grid
    nodes, or a :class:`~mftg.core.Path`.  Paths share the model but draw
    independent noise, one counter block per path, so results are
    reproducible per (seed, stream) and invariant to ``n_paths`` prefixes.
    """
    if n_paths < 1:
        raise ConfigError(f"n_paths must be >= 1, got {n_paths}")
    d = _delay_steps(model, grid)
    n, h = grid.n_steps, grid.h
    ts = grid.times()
    if isinstance(control, Path):
        u = np.asarray(control.values, dtype=float)
    elif isinstance(control, np.ndarray):
        u = np.asarray(control, dtype=float)
    else:
        uf = as_time_function(control)
        u = np.array([float(uf(t)) for t in ts])
    if u.shape != (n + 1,):
        raise ConfigError(f"control must have {n + 1} grid values, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise NonFiniteError("control contains non-finite values")

    c1f, c2f, histf = model.c1_fn(), model.c2_fn(), model.history_fn()
    c1 = np.array([float(c1f(t)) for t in ts])
    c2 = np.array([float(c2f(t)) for t in ts])
    hist_vals = np.array([float(histf((i - d) * h)) for i in range(d + 1)])
    if not (np.all(np.isfinite(c1)) and np.all(np.isfinite(c2)) and np.all(np.isfinite(hist_vals))):
        raise NonFiniteError("coefficients or history non-finite on the grid")

    dw = stream.normal_matrix(n_paths, n)
    paths = _kernels.prosumer_ensemble(hist_vals, c1, c2, u, h, d, dw)
    if not np.all(np.isfinite(paths)):
        raise NonFiniteError("energy paths diverged during simulation")
    return ProsumerSimResult(
        paths=paths,
        mean=Path(grid, paths.mean(axis=0)),
        var=Path(grid, paths.var(axis=0)),
        control=Path(grid, u),
    )
