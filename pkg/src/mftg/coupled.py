"""Diffusively coupled SDE ensembles: oscillators, rooms, moment checks.

Three families share the theme of many agents coupled through pairwise
differences.  Phase oscillators

    dtheta_i = [omega_i + sum_j K_ij sin(theta_j - theta_i) + u_i] dt
               + sigma dW_i

synchronize under the consensus feedback ``u_i = -omega_i +
eta_i sin(mean(theta) - theta_i)``.  Room temperatures

    dT_i = [eps1 (T_ext - T_i) + sum_j eps2_ij (T_j - T_i)
            + eps3 u_i (T_ref - T_i)] dt + sigma dW_i

are driven toward a comfort temperature under a proportional,
price-sensitive heating law, with a running cost ``u_i p + (T_i - T_comf)^2
+ var(T_i - T_comf)``.  Finally two scalar first-moment propositions, for a
battery ``de = -u dt + v dt + sigma dW`` and an Ornstein-Uhlenbeck channel
``dH = Gamma (Hhat - H) dt + sigma dW``, are checked against Monte-Carlo
ensembles of their SDEs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .core import Path, RandomStream, TimeGrid, as_time_function, rk4_integrate
from .errors import ConfigError

__all__ = [
    "OscillatorEnsemble",
    "ThermalNetwork",
    "ComfortLaw",
    "KuramotoResult",
    "RoomsResult",
    "MomentCheck",
    "consensus_control",
    "order_parameter",
    "circular_gap",
    "phase_clusters",
    "coupling_matrix",
    "simulate_kuramoto",
    "simulate_rooms",
    "energy_mean_check",
    "ou_mean_check",
]


# ---------------------------------------------------------------------------
# phase oscillators


@dataclass(frozen=True)
class OscillatorEnsemble:
    """Phase oscillators with pairwise sine coupling and additive noise.

    ``theta0`` are initial phases (stored and simulated unwrapped, so paths
    stay continuous; wrap with ``np.mod(values, 2 * np.pi)`` for reporting).
    ``kmat[i, j]`` weights the pull of oscillator ``j`` on ``i``; its diagonal
    never contributes because ``sin(0) = 0``.  ``eta`` are per-oscillator
    consensus gains, used only when a controlled simulation is requested.
    """

    theta0: np.ndarray
    omega: np.ndarray
    kmat: np.ndarray
    sigma: float = 0.0
    eta: np.ndarray | float = 1.0

    def __post_init__(self) -> None:
        theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        kmat = np.asarray(self.kmat, dtype=float)
        n = theta0.size
        if n < 2:
            raise ConfigError(f"need at least 2 oscillators, got {n}")
        if omega.shape != (n,):
            raise ConfigError(f"omega shape {omega.shape} does not match {n} oscillators")
        if kmat.shape != (n, n):
            raise ConfigError(f"kmat shape {kmat.shape} is not ({n}, {n})")
        eta = np.broadcast_to(np.asarray(self.eta, dtype=float), (n,)).copy()
        for name, arr in (("theta0", theta0), ("omega", omega), ("kmat", kmat), ("eta", eta)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite entries")
        if np.min(kmat) < 0.0:
            raise ConfigError("coupling weights must be nonnegative")
        if np.min(eta) < 0.0:
            raise ConfigError("consensus gains must be nonnegative")
        if not (math.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ConfigError(f"sigma must be a nonnegative float, got {self.sigma}")
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "kmat", kmat)
        object.__setattr__(self, "eta", eta)

    @property
    def n(self) -> int:
        return self.theta0.size


def consensus_control(
    theta: np.ndarray, omega: np.ndarray, eta: np.ndarray | float
) -> np.ndarray:
    """Feedback ``u_i = -omega_i + eta_i sin(mean(theta) - theta_i)``.

    Cancels each oscillator's natural drift and pulls its phase toward the
    current ensemble mean.  Gains must be nonnegative.
    """
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0.0):
        raise ConfigError("consensus gains must be nonnegative")
    return -omega + eta * np.sin(theta.mean() - theta)


def order_parameter(theta: np.ndarray) -> np.ndarray | float:
    """Synchrony measure ``r = |mean(exp(i theta))|`` over the last axis.

    Equals 1 when all phases coincide and 0 for balanced spread.
    """
    r = np.abs(np.exp(1j * np.asarray(theta, dtype=float)).mean(axis=-1))
    # |mean of unit vectors| <= 1 exactly; clamp float rounding above 1
    return np.minimum(r, 1.0)


def circular_gap(a: np.ndarray | float, b: np.ndarray | float) -> np.ndarray | float:
    """Distance between phases on the circle, in [0, pi]."""
    return np.abs(np.angle(np.exp(1j * (np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))))


def phase_clusters(theta: np.ndarray, merge_below: float = 0.1) -> list[list[int]]:
    """Group oscillators whose phases sit within ``merge_below`` radians.

    Single-linkage on circular distance: two oscillators share a cluster
    whenever a chain of pairwise gaps below the threshold connects them.
    Returns index lists ordered by smallest member; they partition
    ``range(len(theta))``.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    gaps = circular_gap(theta[:, None], theta[None, :])
    for i in range(n):
        for j in range(i + 1, n):
            if gaps[i, j] < merge_below:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def coupling_matrix(
    kind: str,
    n: int,
    strength: float = 1.0,
    block_sizes: list[int] | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Build a nonnegative coupling matrix of a named shape.

    ``"full"`` gives all-to-all weight ``strength / n`` (the classical
    normalization, so total pull per oscillator stays O(strength)).
    ``"block"`` needs ``block_sizes`` summing to ``n`` and couples only within
    blocks, at ``strength / size``.  ``"random"`` draws a symmetric matrix
    with entries uniform on ``[0, strength / n]``.
    """
    if n < 2:
        raise ConfigError(f"need at least 2 oscillators, got {n}")
    if strength < 0.0:
        raise ConfigError("coupling strength must be nonnegative")
    if kind == "full":
        return np.full((n, n), strength / n)
    if kind == "block":
        if not block_sizes or sum(block_sizes) != n or min(block_sizes) < 1:
            raise ConfigError(f"block sizes {block_sizes} do not partition {n} oscillators")
        k = np.zeros((n, n))
        start = 0
        for size in block_sizes:
            k[start : start + size, start : start + size] = strength / size
            start += size
        return k
    if kind == "random":
        if rng is None:
            raise ConfigError("random coupling needs an explicit generator")
        k = rng.uniform(0.0, strength / n, (n, n))
        return (k + k.T) / 2.0
    raise ConfigError(f"unknown coupling kind {kind!r}; use full, block, or random")


@dataclass(frozen=True)
class KuramotoResult:
    """Simulated phases (unwrapped, shape (steps+1, n)) and synchrony path."""

    phases: Path
    order: Path

    def wrapped(self) -> np.ndarray:
        return np.mod(self.phases.values, 2.0 * np.pi)


def simulate_kuramoto(
    ensemble: OscillatorEnsemble,
    grid: TimeGrid,
    stream: RandomStream,
    control: str = "none",
) -> KuramotoResult:
    """Euler-Maruyama on the phase SDE, reporting the order parameter per step.

    ``control`` is ``"none"`` (natural drift plus coupling) or
    ``"consensus"`` (adds :func:`consensus_control` at every step).
    """
    if control not in ("none", "consensus"):
        raise ConfigError(f"unknown control {control!r}; use none or consensus")
    dw = stream.generator().standard_normal((grid.n_steps, ensemble.n))
    phases = _kernels.kuramoto_ensemble(
        ensemble.theta0,
        ensemble.omega,
        ensemble.kmat,
        ensemble.sigma,
        np.asarray(ensemble.eta, dtype=float),
        control == "consensus",
        grid.h,
        dw,
    )
    return KuramotoResult(
        phases=Path(grid, phases),
        order=Path(grid, order_parameter(phases)),
    )


# ---------------------------------------------------------------------------
# thermal comfort network


@dataclass(frozen=True)
class ThermalNetwork:
    """Rooms exchanging heat with the exterior, each other, and a heater.

    ``t_ext`` and ``price`` accept a constant or a callable of time.  The
    comfort band and target default to the 23-25 degree window with the
    target at its midpoint.  ``eps1`` is the leakage rate to the exterior,
    ``eps2[i, j]`` the exchange rate from room ``j`` into room ``i``, and
    ``eps3`` scales how strongly effort moves the room toward ``t_ref``
    (positive, otherwise the actuator has no authority).
    """

    t0: np.ndarray
    t_ext: float | Callable[[float], float]
    t_ref: float
    eps1: float
    eps2: np.ndarray
    eps3: float
    sigma: float = 0.0
    price: float | Callable[[float], float] = 1.0
    t_comf: float = 24.0
    band: tuple[float, float] = (23.0, 25.0)

    def __post_init__(self) -> None:
        t0 = np.atleast_1d(np.asarray(self.t0, dtype=float))
        n = t0.size
        eps2 = np.asarray(self.eps2, dtype=float)
        if eps2.shape != (n, n):
            raise ConfigError(f"eps2 shape {eps2.shape} is not ({n}, {n})")
        if not (np.all(np.isfinite(t0)) and np.all(np.isfinite(eps2))):
            raise ConfigError("temperatures and couplings must be finite")
        if np.min(eps2) < 0.0:
            raise ConfigError("exchange couplings must be nonnegative")
        if not (math.isfinite(self.eps1) and self.eps1 > 0.0):
            raise ConfigError(f"eps1 must be positive, got {self.eps1}")
        if not (math.isfinite(self.eps3) and self.eps3 > 0.0):
            raise ConfigError(f"eps3 must be positive, got {self.eps3}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ConfigError(f"sigma must be a nonnegative float, got {self.sigma}")
        lo, hi = self.band
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ConfigError(f"band {self.band} is not an interval")
        if not math.isfinite(self.t_comf):
            raise ConfigError("comfort target must be finite")
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "eps2", eps2)

    @property
    def n(self) -> int:
        return self.t0.size


@dataclass(frozen=True)
class ComfortLaw:
    """Proportional heating law with price damping.

    Effort ``u_i = gain (T_comf - T_i) / (eps3 (T_ref - T_i))``, applied only
    when it pushes toward comfort (same sign of gap and actuation lever),
    divided by ``1 + price_weight * p(t)`` and clipped to ``[0, u_max]``.
    Unclipped and with zero price weight, the closed loop pulls each room
    toward ``T_comf`` at rate ``gain``.
    """

    gain: float = 4.0
    u_max: float = 10.0
    price_weight: float = 0.1

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gain) and self.gain >= 0.0):
            raise ConfigError(f"gain must be nonnegative, got {self.gain}")
        if not (math.isfinite(self.u_max) and self.u_max >= 0.0):
            raise ConfigError(f"u_max must be nonnegative, got {self.u_max}")
        if not (math.isfinite(self.price_weight) and self.price_weight >= 0.0):
            raise ConfigError(f"price_weight must be nonnegative, got {self.price_weight}")


@dataclass(frozen=True)
class RoomsResult:
    """Ensemble statistics from a thermal simulation.

    ``sample`` is one representative path of all rooms; ``mean`` and ``var``
    are per-step ensemble statistics across paths, shape (steps+1, n).
    ``cost`` accumulates ``u p + (T - T_comf)^2`` plus the ensemble variance
    term per room, ``comfort`` is the fraction of steps inside the band, and
    ``effort`` the path-averaged integral of ``u``.
    """

    sample: Path
    mean: Path
    var: Path
    cost: np.ndarray
    comfort: np.ndarray
    effort: np.ndarray


def simulate_rooms(
    network: ThermalNetwork,
    grid: TimeGrid,
    stream: RandomStream,
    law: ComfortLaw | None = None,
    n_paths: int = 128,
) -> RoomsResult:
    """Euler-Maruyama ensemble of the room SDE under the shipped heating law.

    The variance part of the running cost uses the cross-path ensemble
    variance at each step, so several paths are needed for it to be
    meaningful; a single path gets zero variance cost.
    """
    law = law or ComfortLaw()
    if n_paths < 1:
        raise ConfigError(f"need at least one path, got {n_paths}")
    times = grid.times()
    text_fn = as_time_function(network.t_ext)
    price_fn = as_time_function(network.price)
    text = np.array([text_fn(t) for t in times])
    price = np.array([price_fn(t) for t in times])
    if not (np.all(np.isfinite(text)) and np.all(np.isfinite(price))):
        raise ConfigError("exterior temperature and price must be finite on the grid")
    if np.min(price) < 0.0:
        raise ConfigError("price must be nonnegative on the grid")
    dw = np.empty((n_paths, grid.n_steps, network.n))
    for p in range(n_paths):
        dw[p] = stream.path_generator(p).standard_normal((grid.n_steps, network.n))
    sample, mean, var, cost, comfort, effort = _kernels.rooms_ensemble(
        network.t0,
        text,
        price,
        network.eps1,
        network.eps2,
        network.eps3,
        network.sigma,
        network.t_ref,
        network.t_comf,
        network.band[0],
        network.band[1],
        law.gain,
        law.u_max,
        law.price_weight,
        grid.h,
        dw,
    )
    return RoomsResult(
        sample=Path(grid, sample),
        mean=Path(grid, mean),
        var=Path(grid, var),
        cost=cost,
        comfort=comfort,
        effort=effort,
    )


# ---------------------------------------------------------------------------
# first-moment propositions with Monte-Carlo witnesses


@dataclass(frozen=True)
class MomentCheck:
    """Predicted mean path, optionally with a Monte-Carlo comparison.

    When an ensemble was simulated, ``mc_mean`` and ``mc_se`` hold the sample
    mean and its standard error per grid point, ``max_z`` the largest
    ``|mc_mean - predicted| / se``, and ``ok`` whether every point sits
    within three standard errors.  All three are None otherwise.
    """

    predicted: Path
    mc_mean: Path | None = None
    mc_se: np.ndarray | None = None
    max_z: float | None = None
    ok: bool | None = None


def _mc_summary(grid: TimeGrid, samples: np.ndarray, predicted: np.ndarray) -> MomentCheck:
    n_paths = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n_paths)
    diff = np.abs(mean - predicted)
    # the initial point is deterministic: se there is 0 and the gap must be 0
    z = np.divide(diff, se, out=np.where(diff == 0.0, 0.0, np.inf), where=se > 0.0)
    max_z = float(np.max(z))
    return MomentCheck(
        predicted=Path(grid, predicted),
        mc_mean=Path(grid, mean),
        mc_se=se,
        max_z=max_z,
        ok=bool(max_z <= 3.0),
    )


def energy_mean_check(
    u_mean: float | Callable[[float], float],
    v_mean: float | Callable[[float], float],
    e0: float,
    grid: TimeGrid,
    sigma: float = 0.0,
    stream: RandomStream | None = None,
    n_paths: int = 10_000,
) -> MomentCheck:
    """First moment of the storage SDE ``de = -u dt + v dt + sigma dW``.

    Averaging the dynamics gives ``d ebar/dt = -ubar + vbar``, integrated
    here with RK4.  Passing a stream simulates ``n_paths`` of the SDE
    (midpoint rule for the deterministic increment, exact Gaussian noise)
    and reports whether the sample mean stays within three standard errors
    of the prediction pointwise.
    """
    u_fn = as_time_function(u_mean)
    v_fn = as_time_function(v_mean)
    predicted = rk4_integrate(lambda t, e: v_fn(t) - u_fn(t), float(e0), grid)
    if stream is None:
        return MomentCheck(predicted=predicted)
    if not sigma > 0.0:
        raise ConfigError("the Monte-Carlo check needs sigma > 0; without noise it degenerates")
    if n_paths < 2:
        raise ConfigError(f"need at least two paths, got {n_paths}")
    h = grid.h
    mid = grid.times()[:-1] + 0.5 * h
    drift = np.array([v_fn(t) - u_fn(t) for t in mid]) * h
    noise = stream.normal_matrix(n_paths, grid.n_steps) * (sigma * math.sqrt(h))
    samples = np.empty((n_paths, grid.n_steps + 1))
    samples[:, 0] = e0
    samples[:, 1:] = e0 + np.cumsum(drift[None, :] + noise, axis=1)
    return _mc_summary(grid, samples, predicted.values)


def ou_mean_check(
    gamma: float,
    h_hat: float,
    h0: float,
    grid: TimeGrid,
    sigma: float = 0.0,
    stream: RandomStream | None = None,
    n_paths: int = 10_000,
) -> MomentCheck:
    """Mean of the mean-reverting channel ``dH = Gamma (Hhat - H) dt + sigma dW``.

    The first moment solves ``d Hbar/dt = Gamma (Hhat - Hbar)``, whose closed
    form ``Hbar(t) = Hhat + (H0 - Hhat) exp(-Gamma t)`` decays exponentially
    to the target.  Passing a stream samples the SDE with its exact Gaussian
    transition and reports the three-standard-error comparison.
    """
    if not (math.isfinite(gamma) and gamma > 0.0):
        raise ConfigError(f"gamma must be positive, got {gamma}")
    elapsed = grid.times() - grid.t0
    predicted = h_hat + (h0 - h_hat) * np.exp(-gamma * elapsed)
    if stream is None:
        return MomentCheck(predicted=Path(grid, predicted))
    if not sigma > 0.0:
        raise ConfigError("the Monte-Carlo check needs sigma > 0; without noise it degenerates")
    if n_paths < 2:
        raise ConfigError(f"need at least two paths, got {n_paths}")
    decay = math.exp(-gamma * grid.h)
    shock = sigma * math.sqrt((1.0 - decay * decay) / (2.0 * gamma))
    xi = stream.normal_matrix(n_paths, grid.n_steps)
    samples = np.empty((n_paths, grid.n_steps + 1))
    samples[:, 0] = h0
    x = np.full(n_paths, float(h0))
    for k in range(grid.n_steps):
        x = h_hat + (x - h_hat) * decay + shock * xi[:, k]
        samples[:, k + 1] = x
    return _mc_summary(grid, samples, predicted)
