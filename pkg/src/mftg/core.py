"""Shared numerical plumbing: time grids, paths, random streams, integrators.

All stochastic routines draw through :class:`RandomStream`, which is a frozen
(seed, stream_index) pair.  A stream never holds mutable state; every call
that consumes randomness rebuilds its generator from the key, so repeating a
call with the same stream reproduces the same numbers.  Ensemble routines give
path ``p`` its own counter block, which makes the draws for path ``p``
independent of how many other paths are requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DelayNotOnGridError, NoBracketError, NonFiniteError

__all__ = [
    "TimeGrid",
    "Path",
    "RandomStream",
    "as_simplex",
    "check_simplex",
    "uniform_simplex",
    "random_simplex",
    "rk4_integrate",
    "em_simulate",
    "milstein_delay_simulate",
    "bracketed_root",
    "as_time_function",
]

_U64 = np.uint64


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with ``n_steps`` steps on ``[t0, t1]``."""

    t0: float
    t1: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t0) and math.isfinite(self.t1)):
            raise ValueError("grid endpoints must be finite")
        if self.t1 <= self.t0:
            raise ValueError(f"need t1 > t0, got [{self.t0}, {self.t1}]")
        if self.n_steps < 1:
            raise ValueError(f"need n_steps >= 1, got {self.n_steps}")

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n_steps + 1)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the grid point equal to ``t`` (within ``tol`` of a step)."""
        k = round((t - self.t0) / self.h)
        if k < 0 or k > self.n_steps or abs(self.t0 + k * self.h - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the grid")
        return int(k)


@dataclass(frozen=True)
class Path:
    """States sampled on a :class:`TimeGrid`.

    ``values`` has shape ``(n_steps + 1,)`` for scalar states or
    ``(n_steps + 1, d)`` for vector states.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim not in (1, 2) or v.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"values shape {v.shape} does not match grid with {self.grid.n_steps} steps"
            )
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("path contains non-finite values")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times()

    @property
    def final(self) -> np.ndarray | float:
        out = self.values[-1]
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RandomStream:
    """Keyed source of randomness.

    Identical ``(seed, stream_index)`` pairs always produce identical draws;
    distinct pairs are independent (Philox counter-based generator keyed by
    both words).  Use :meth:`shifted` to hand non-overlapping streams to
    unrelated consumers.
    """

    seed: int
    stream_index: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in uint64")
        if not 0 <= self.stream_index < 2**64:
            raise ValueError("stream_index must fit in uint64")

    def _key(self) -> np.ndarray:
        return np.array([self.seed, self.stream_index], dtype=_U64)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self._key()))

    def path_generator(self, path: int) -> np.random.Generator:
        # Counter block (path+1) << 192: disjoint from the plain generator and
        # from every other path regardless of ensemble size.
        counter = np.array([0, 0, 0, path + 1], dtype=_U64)
        return np.random.Generator(np.random.Philox(key=self._key(), counter=counter))

    def shifted(self, k: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_index + k)

    def normal_matrix(self, n_paths: int, n_steps: int) -> np.ndarray:
        """Standard normals, shape ``(n_paths, n_steps)``, one block per path."""
        out = np.empty((n_paths, n_steps))
        for p in range(n_paths):
            out[p] = self.path_generator(p).standard_normal(n_steps)
        return out

    def uniform_matrix(self, n_rows: int, n_cols: int) -> np.ndarray:
        """Uniforms in [0, 1), shape ``(n_rows, n_cols)``, one block per row."""
        out = np.empty((n_rows, n_cols))
        for r in range(n_rows):
            out[r] = self.path_generator(r).random(n_cols)
        return out


# ---------------------------------------------------------------------------
# probability simplex helpers


def check_simplex(w: np.ndarray, tol: float = 1e-9) -> None:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("simplex vector must be 1-d and non-empty")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("simplex vector contains non-finite entries")
    if np.min(w) < -tol:
        raise ValueError(f"negative mass {np.min(w)} exceeds tolerance {tol}")
    if abs(float(np.sum(w)) - 1.0) > tol:
        raise ValueError(f"mass {np.sum(w)} is not 1 within tolerance {tol}")


def as_simplex(w: Sequence[float] | np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate ``w`` as a probability vector and renormalize rounding drift."""
    w = np.asarray(w, dtype=float)
    check_simplex(w, tol=tol)
    w = np.clip(w, 0.0, None)
    return w / float(np.sum(w))


def uniform_simplex(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one component")
    return np.full(n, 1.0 / n)


def random_simplex(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from the simplex (normalized exponentials)."""
    g = rng.exponential(size=n)
    return g / g.sum()


# ---------------------------------------------------------------------------
# deterministic and stochastic integrators


def _require_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite state during {where}")


def rk4_integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray | float,
    grid: TimeGrid,
) -> Path:
    """Classical fourth-order Runge-Kutta for ``dx/dt = rhs(t, x)``."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    scalar = np.ndim(x0) == 0
    h = grid.h
    out = np.empty((grid.n_steps + 1,) + x.shape)
    out[0] = x
    t = grid.t0
    for k in range(grid.n_steps):
        k1 = np.asarray(rhs(t, x), dtype=float)
        k2 = np.asarray(rhs(t + 0.5 * h, x + 0.5 * h * k1), dtype=float)
        k3 = np.asarray(rhs(t + 0.5 * h, x + 0.5 * h * k2), dtype=float)
        k4 = np.asarray(rhs(t + h, x + h * k3), dtype=float)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _require_finite(x, "rk4_integrate")
        out[k + 1] = x
        t = grid.t0 + (k + 1) * h
    return Path(grid, out[:, 0] if scalar else out)


def em_simulate(
    drift: Callable[[float, np.ndarray], np.ndarray],
    diffusion: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray | float,
    grid: TimeGrid,
    stream: RandomStream,
) -> Path:
    """Euler-Maruyama for ``dx = drift dt + diffusion dW`` (diagonal noise).

    ``diffusion`` returns a scalar or a per-component array; each component
    gets its own independent Brownian increment.  With ``diffusion`` equal to
    zero this reduces to the explicit Euler scheme.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    scalar = np.ndim(x0) == 0
    h = grid.h
    sqrt_h = math.sqrt(h)
    rng = stream.generator()
    dW = rng.standard_normal((grid.n_steps, x.size)) * sqrt_h
    out = np.empty((grid.n_steps + 1,) + x.shape)
    out[0] = x
    for k in range(grid.n_steps):
        t = grid.t0 + k * h
        mu = np.broadcast_to(np.asarray(drift(t, x), dtype=float), x.shape)
        sig = np.broadcast_to(np.asarray(diffusion(t, x), dtype=float), x.shape)
        x = x + h * mu + sig * dW[k]
        _require_finite(x, "em_simulate")
        out[k + 1] = x
    return Path(grid, out[:, 0] if scalar else out)


def milstein_delay_simulate(
    drift: Callable[[float, float, float], float],
    diffusion: Callable[[float, float, float], float],
    history: Callable[[float], float] | float,
    tau: float,
    grid: TimeGrid,
    stream: RandomStream,
    dw: np.ndarray | None = None,
) -> Path:
    """Milstein scheme for a scalar delayed SDE.

    Dynamics ``dx = drift(t, x(t), x(t-tau)) dt + diffusion(t, x(t), x(t-tau)) dW``.
    The delay must be an integer number of grid steps; past values come from
    the stored path, and times before ``t0`` come from ``history`` (a callable
    on ``[t0 - tau, t0]`` or a constant).

    The correction terms use finite-difference partials of the diffusion in
    its current-state and delayed-state slots.  The delayed correction
    approximates the cross Brownian integral by the product of the current and
    lagged increments, which has the correct mean and vanishes while the
    delayed argument still sits in the deterministic history segment.

    ``dw`` overrides the Brownian increments (already scaled by sqrt(h)),
    which lets callers couple runs at different resolutions.
    """
    h = grid.h
    d = tau / h
    d_int = round(d)
    if d_int < 1 or abs(d - d_int) > 1e-9 * max(1.0, abs(d)):
        raise DelayNotOnGridError(f"tau={tau} is not a positive multiple of h={h}")
    if callable(history):
        hist = history
    else:
        h0 = float(history)
        hist = lambda t: h0  # noqa: E731

    n = grid.n_steps
    x = np.empty(n + 1)
    x[0] = hist(grid.t0)
    if dw is None:
        dW = stream.generator().standard_normal(n) * math.sqrt(h)
    else:
        dW = np.asarray(dw, dtype=float)
        if dW.shape != (n,):
            raise ValueError(f"dw must have shape ({n},), got {dW.shape}")

    def lagged(k: int) -> float:
        j = k - d_int
        return x[j] if j >= 0 else float(hist(grid.t0 + j * h))

    def lagged_dW(k: int) -> float:
        j = k - d_int
        return dW[j] if j >= 0 else 0.0

    fd = 1e-6
    for k in range(n):
        t = grid.t0 + k * h
        xc, xd = x[k], lagged(k)
        mu = float(drift(t, xc, xd))
        sig = float(diffusion(t, xc, xd))
        step = max(fd, fd * abs(xc))
        dsig_dx = (float(diffusion(t, xc + step, xd)) - float(diffusion(t, xc - step, xd))) / (2 * step)
        stepd = max(fd, fd * abs(xd))
        dsig_dxd = (float(diffusion(t, xc, xd + stepd)) - float(diffusion(t, xc, xd - stepd))) / (2 * stepd)
        # diffusion one delay back, for the delayed correction term
        jk = k - d_int
        if jk >= 0:
            td = grid.t0 + jk * h
            sig_del = float(diffusion(td, x[jk], lagged(jk)))
        else:
            sig_del = 0.0
        xn = (
            xc
            + h * mu
            + sig * dW[k]
            + 0.5 * sig * dsig_dx * (dW[k] ** 2 - h)
            + dsig_dxd * sig_del * lagged_dW(k) * dW[k]
        )
        if not math.isfinite(xn):
            raise NonFiniteError("non-finite state during milstein_delay_simulate")
        x[k + 1] = xn
    return Path(grid, x)


def bracketed_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """Root of ``f`` on ``[lo, hi]`` by bisection with secant acceleration.

    Requires a sign change on the bracket; stops when ``|f| <= tol`` or the
    bracket width drops below ``tol``.
    """
    if not (hi > lo):
        raise ValueError(f"need hi > lo, got [{lo}, {hi}]")
    fa, fb = float(f(lo)), float(f(hi))
    if not (math.isfinite(fa) and math.isfinite(fb)):
        raise NonFiniteError("non-finite endpoint values in bracketed_root")
    if fa == 0.0:
        return lo
    if fb == 0.0:
        return hi
    if fa * fb > 0.0:
        raise NoBracketError(f"no sign change on [{lo}, {hi}]: f={fa:.3g}, {fb:.3g}")
    a, b = lo, hi
    for _ in range(max_iter):
        # secant candidate, falling back to the midpoint when it leaves [a, b]
        denom = fb - fa
        m = b - fb * (b - a) / denom if denom != 0.0 else 0.5 * (a + b)
        lo_guard = a + 0.25 * (b - a)
        hi_guard = b - 0.25 * (b - a)
        if not (lo_guard <= m <= hi_guard):
            m = 0.5 * (a + b)
        fm = float(f(m))
        if not math.isfinite(fm):
            raise NonFiniteError("non-finite value during bracketed_root")
        if abs(fm) <= tol or (b - a) <= tol:
            return m
        if fa * fm < 0.0:
            b, fb = m, fm
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def as_time_function(spec: float | Callable[[float], float]) -> Callable[[float], float]:
    """Normalize a scalar-or-callable coefficient to a callable of time."""
    if callable(spec):
        return spec
    val = float(spec)
    return lambda t: val
