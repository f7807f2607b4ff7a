"""Malware propagation over a population of networked machines.

Machines occupy one of five compartments: two dormant-infected types, two
actively-corrupt types, and a clean/honest pool shared by both types.  The
module exposes the mean-field drift and its finite-population version, the
matching agent-level and graph-restricted simulators, steady-state
root-finding, and a Pontryagin forward-backward sweep that tunes the two
behavioural rates (meeting acceptance and attachment opening) to keep the
clean share high.

Compartment order everywhere: (d1, d2, c1, c2, h).
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .core import Path, RandomStream, TimeGrid, rk4_integrate
from .errors import GridTooCoarseError, IsolatedGraphWarning, NonFiniteError

__all__ = [
    "VirusParams",
    "default_virus_params",
    "as_population",
    "virus_drift",
    "finite_drift",
    "virus_jacobian",
    "adjoint_rhs",
    "hamiltonian",
    "simulate_population_ode",
    "find_steady_state",
    "simulate_agents",
    "simulate_graph",
    "optimize_control",
    "AgentSimResult",
    "GraphSimResult",
    "ControlResult",
]

_UNIT_FIELDS = (
    "delta_d", "delta_c", "delta_h", "delta_sm", "delta_e", "delta_m", "lam", "beta", "eta",
)


@dataclasses.dataclass(frozen=True)
class VirusParams:
    """Transition rates of the infection chain.

    All rates live in [0,1].  ``q1, q2`` are the half-saturation dormant
    densities of the corrupt-to-dormant channel and must be positive
    (they appear in denominators).  ``delta_e`` and ``delta_m`` are the
    behavioural knobs the control problem tunes.
    """

    delta_d: float
    delta_c: float
    delta_h: float
    delta_sm: float
    delta_e: float
    delta_m: float
    lam: float
    beta: float
    eta: float
    q1: float
    q2: float

    def __post_init__(self):
        for name in _UNIT_FIELDS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {v}")
        for name in ("q1", "q2"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0,1], got {v}")


def default_virus_params(**overrides) -> VirusParams:
    """Shipped baseline rate set (the reference figures use it)."""
    base = dict(
        delta_d=0.1, delta_c=0.1, delta_h=0.05, delta_sm=0.2, delta_e=0.5,
        delta_m=0.5, lam=0.3, beta=0.4, eta=0.3, q1=0.2, q2=0.2,
    )
    base.update(overrides)
    return VirusParams(**base)


def as_population(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (5,):
        raise ValueError("population state must have five compartments")
    if np.any(m < -1e-12) or abs(m.sum() - 1.0) > 1e-9:
        raise ValueError("population state must be a probability vector")
    return m


def _controls(params: VirusParams, delta_e, delta_m):
    de = params.delta_e if delta_e is None else delta_e
    dm = params.delta_m if delta_m is None else delta_m
    return de, dm


def _drift_terms(m, params: VirusParams, de, dm):
    """The five drift components, broadcasting over array-valued controls."""
    d1, d2, c1, c2, h = m
    d = d1 + d2
    c = c1 + c2
    p = params
    relapse = de * p.delta_sm + dm * p.eta * d
    corrupt = p.delta_h + (1.0 - p.delta_h) * c
    meet1 = 2.0 * p.lam * d1 * d1 * dm * dm
    meet2 = 2.0 * p.lam * d2 * d2 * dm * dm
    clean1 = c1 * p.beta * d1 / (p.q1 + d1)
    clean2 = c2 * p.beta * d2 / (p.q2 + d2)
    f1 = -d1 * p.delta_d - meet1 - clean1 + h * relapse
    f2 = -d2 * p.delta_d - meet2 - clean2 + h * relapse
    f3 = meet1 - c1 * p.delta_c + clean1 + h * corrupt
    f4 = meet2 - c2 * p.delta_c + clean2 + h * corrupt
    f5 = d * p.delta_d + c * p.delta_c - 2.0 * h * corrupt - 2.0 * h * relapse
    return f1, f2, f3, f4, f5


def virus_drift(m, params: VirusParams, delta_e=None, delta_m=None) -> np.ndarray:
    """Mean-field drift of the compartment shares; components sum to zero."""
    m = as_population(m)
    de, dm = _controls(params, delta_e, delta_m)
    return np.stack(np.broadcast_arrays(*_drift_terms(m, params, de, dm)))


def finite_drift(m, params: VirusParams, n: int, delta_e=None, delta_m=None) -> np.ndarray:
    """Expected one-step change scaled by n; gaps to the limit are O(1/n).

    Only the pairwise-meeting terms differ from the limit: the partner
    pool excludes the node itself, replacing d_t**2 with d_t*(d_t - 1/n).
    """
    if n < 2:
        raise ValueError("finite drift needs at least two nodes")
    m = as_population(m)
    de, dm = _controls(params, delta_e, delta_m)
    f = np.stack(np.broadcast_arrays(*_drift_terms(m, params, de, dm)))
    d1, d2 = m[0], m[1]
    corr1 = 2.0 * params.lam * dm * dm * d1 * (d1 - (n * d1 - 1.0) / n)
    corr2 = 2.0 * params.lam * dm * dm * d2 * (d2 - (n * d2 - 1.0) / n)
    f[0] += corr1
    f[1] += corr2
    f[2] -= corr1
    f[3] -= corr2
    return f


def virus_jacobian(m, params: VirusParams, delta_e=None, delta_m=None) -> np.ndarray:
    """Analytic Jacobian d(drift)/d(shares), shape (5, 5)."""
    m = as_population(m)
    de, dm = _controls(params, delta_e, delta_m)
    d1, d2, c1, c2, h = m
    d = d1 + d2
    c = c1 + c2
    p = params
    relapse = de * p.delta_sm + dm * p.eta * d
    corrupt = p.delta_h + (1.0 - p.delta_h) * c
    g1 = d1 / (p.q1 + d1)
    g2 = d2 / (p.q2 + d2)
    dg1 = p.q1 / (p.q1 + d1) ** 2
    dg2 = p.q2 / (p.q2 + d2) ** 2
    dmeet1 = 4.0 * p.lam * dm * dm * d1
    dmeet2 = 4.0 * p.lam * dm * dm * d2
    jac = np.zeros((5, 5))
    # rows: f1, f2, f3, f4, f5; columns: d1, d2, c1, c2, h
    jac[0] = [-p.delta_d - dmeet1 - c1 * p.beta * dg1 + h * dm * p.eta,
              h * dm * p.eta, -p.beta * g1, 0.0, relapse]
    jac[1] = [h * dm * p.eta,
              -p.delta_d - dmeet2 - c2 * p.beta * dg2 + h * dm * p.eta,
              0.0, -p.beta * g2, relapse]
    jac[2] = [dmeet1 + c1 * p.beta * dg1, 0.0,
              -p.delta_c + p.beta * g1 + h * (1.0 - p.delta_h),
              h * (1.0 - p.delta_h), corrupt]
    jac[3] = [0.0, dmeet2 + c2 * p.beta * dg2,
              h * (1.0 - p.delta_h),
              -p.delta_c + p.beta * g2 + h * (1.0 - p.delta_h), corrupt]
    jac[4] = [p.delta_d - 2.0 * h * dm * p.eta,
              p.delta_d - 2.0 * h * dm * p.eta,
              p.delta_c - 2.0 * h * (1.0 - p.delta_h),
              p.delta_c - 2.0 * h * (1.0 - p.delta_h),
              -2.0 * corrupt - 2.0 * relapse]
    return jac


def adjoint_rhs(m, p_vec, params: VirusParams, delta_e=None, delta_m=None) -> np.ndarray:
    """Costate derivative: transposed-Jacobian action plus the running
    reward's unit source on the clean-share costate."""
    p_vec = np.asarray(p_vec, dtype=float)
    if p_vec.shape != (5,):
        raise ValueError("costate must have five components")
    jac = virus_jacobian(m, params, delta_e, delta_m)
    dp = -jac.T @ p_vec
    dp[4] -= 1.0
    return dp


def hamiltonian(m, p_vec, params: VirusParams, delta_e=None, delta_m=None):
    """Running reward plus drift-costate pairing; broadcasts over control
    arrays so a whole candidate grid can be scored in one call."""
    m = as_population(m)
    p_vec = np.asarray(p_vec, dtype=float)
    de, dm = _controls(params, delta_e, delta_m)
    terms = _drift_terms(m, params, np.asarray(de, dtype=float), np.asarray(dm, dtype=float))
    total = m[4]
    for fi, pi in zip(terms, p_vec):
        total = total + fi * pi
    return total


def _control_fn(value, params_value: float) -> Callable[[float], float]:
    if value is None:
        return lambda t: params_value
    if callable(value):
        return value
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ValueError("control values must lie in [0,1]")
    return lambda t: v


def simulate_population_ode(
    params: VirusParams,
    m0,
    grid: TimeGrid,
    delta_e=None,
    delta_m=None,
) -> Path:
    """Integrate the share dynamics; the flow must keep the simplex on its
    own (no renormalization), so a drift overshoot surfaces as an error."""
    m0 = as_population(m0)
    de_fn = _control_fn(delta_e, params.delta_e)
    dm_fn = _control_fn(delta_m, params.delta_m)

    def rhs(t, m):
        return np.stack(np.broadcast_arrays(*_drift_terms(m, params, de_fn(t), dm_fn(t))))

    path = rk4_integrate(rhs, m0, grid)
    worst_neg = float(path.values.min())
    worst_sum = float(np.abs(path.values.sum(axis=1) - 1.0).max())
    if worst_neg < -1e-9 or worst_sum > 1e-9:
        raise GridTooCoarseError(
            f"simplex invariance violated (min {worst_neg:.2e}, sum gap {worst_sum:.2e}); "
            "refine the grid"
        )
    return path


def find_steady_state(
    params: VirusParams,
    guess=None,
    delta_e=None,
    delta_m=None,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> np.ndarray:
    """Root of the drift on the simplex via damped Newton in the first four
    shares (the fifth is eliminated through the mass constraint)."""
    de, dm = _controls(params, delta_e, delta_m)
    if guess is None:
        # settle the transient first so Newton starts near the root
        settle = simulate_population_ode(
            params, np.full(5, 0.2), TimeGrid(0.0, 200.0, 4000), de, dm
        )
        guess = settle.values[-1]
    y = np.asarray(guess, dtype=float)[:4].copy()

    def full(yv):
        return np.array([yv[0], yv[1], yv[2], yv[3], 1.0 - yv.sum()])

    for _ in range(max_iter):
        m = full(y)
        f = virus_drift(np.clip(m, 0.0, 1.0), params, de, dm)[:4]
        if np.max(np.abs(f)) < tol:
            return full(y)
        jac = virus_jacobian(np.clip(full(y), 0.0, 1.0), params, de, dm)
        # reduced Jacobian: dh = -sum of the other differentials
        red = jac[:4, :4] - jac[:4, 4:5]
        try:
            step = np.linalg.solve(red, f)
        except np.linalg.LinAlgError as exc:
            raise NonFiniteError("singular Jacobian in steady-state search") from exc
        scale = 1.0
        base = np.max(np.abs(f))
        for _ in range(40):
            trial = y - scale * step
            mt = full(trial)
            if np.all(mt > -1e-12) and np.all(mt < 1.0 + 1e-12):
                ft = virus_drift(np.clip(mt, 0.0, 1.0), params, de, dm)[:4]
                if np.max(np.abs(ft)) < base:
                    y = trial
                    break
            scale *= 0.5
        else:
            raise NonFiniteError("steady-state line search stalled")
    raise NonFiniteError("steady-state Newton did not converge")


# ---------------------------------------------------------------------------
# stochastic simulators


@dataclasses.dataclass(frozen=True)
class AgentSimResult:
    """Counts per compartment per step, plus the matching share path."""

    grid: TimeGrid
    counts: np.ndarray

    @property
    def shares(self) -> np.ndarray:
        return self.counts / self.counts[0].sum()


@dataclasses.dataclass(frozen=True)
class GraphSimResult:
    """Per-node state path (values 0..4) and aggregated counts."""

    grid: TimeGrid
    states: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        k, n = self.states.shape
        out = np.zeros((k, 5), dtype=np.int64)
        for j in range(5):
            out[:, j] = (self.states == j).sum(axis=1)
        return out

    @property
    def shares(self) -> np.ndarray:
        return self.counts / self.states.shape[1]


def _initial_counts(m0, n: int) -> np.ndarray:
    m0 = as_population(m0)
    raw = m0 * n
    counts = np.rint(raw).astype(np.int64)
    if np.max(np.abs(raw - counts)) > 1e-9:
        raise ValueError("m0 * n must be integral so the start is representable")
    gap = n - counts.sum()
    counts[np.argmax(counts)] += gap
    return counts


def _per_step_controls(value, params_value: float, grid: TimeGrid) -> np.ndarray:
    fn = _control_fn(value, params_value)
    t = grid.times()[:-1]
    arr = np.array([float(fn(tk)) for tk in t])
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("control values must lie in [0,1]")
    return arr


def simulate_agents(
    params: VirusParams,
    n: int,
    m0,
    grid: TimeGrid,
    stream: RandomStream,
    delta_e=None,
    delta_m=None,
) -> AgentSimResult:
    """Simulate n machines with population-fraction contact terms.

    Per step each machine draws one uniform and resolves its competing
    transition channels (rates scaled by the step size); the behavioural
    Bernoulli actions enter through the per-step intensities.
    """
    if n < 2:
        raise ValueError("need at least two agents")
    counts0 = _initial_counts(m0, n)
    states0 = np.repeat(np.arange(5, dtype=np.int64), counts0)
    gen = stream.generator()
    gen.shuffle(states0)
    de = _per_step_controls(delta_e, params.delta_e, grid)
    dm = _per_step_controls(delta_m, params.delta_m, grid)
    # worst-case cumulative per-step probability over the state space; the
    # channel thresholds are only valid when it stays at or below one
    dm_max = float(dm.max())
    de_max = float(de.max())
    worst = max(
        2.0 * params.lam * dm_max**2
        + params.beta / min(params.q1, params.q2)
        + params.delta_d,
        params.delta_c,
        2.0 + 2.0 * (de_max * params.delta_sm + dm_max * params.eta),
    )
    if worst * grid.h > 1.0:
        raise GridTooCoarseError("step size too large for per-step transition probabilities")
    uniforms = stream.uniform_matrix(grid.n_steps, n)
    counts = _kernels.virus_agents(
        states0, params.delta_d, params.delta_c, params.delta_h, params.delta_sm,
        params.lam, params.beta, params.eta, params.q1, params.q2, de, dm, grid.h, uniforms,
    )
    return AgentSimResult(grid, counts)


def simulate_graph(
    adjacency,
    params: VirusParams,
    states0,
    grid: TimeGrid,
    stream: RandomStream,
    delta_e=None,
    delta_m=None,
) -> GraphSimResult:
    """Same chain, but contact-driven channels see neighbor fractions.

    The adjacency must be symmetric 0/1 with a zero diagonal.  Degree-zero
    nodes trigger a warning; they keep only their spontaneous channels.
    """
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    if np.any((adj != 0) & (adj != 1)):
        raise ValueError("adjacency entries must be 0 or 1")
    if np.any(np.diag(adj) != 0):
        raise ValueError("adjacency diagonal must be zero")
    states0 = np.asarray(states0, dtype=np.int64)
    n = adj.shape[0]
    if states0.shape != (n,) or np.any(states0 < 0) or np.any(states0 > 4):
        raise ValueError("states0 must give one compartment index per node")
    deg = adj.sum(axis=1)
    if np.any(deg == 0):
        warnings.warn(
            f"{int((deg == 0).sum())} isolated node(s); only spontaneous transitions apply",
            IsolatedGraphWarning,
        )
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=indptr[1:])
    indices = np.nonzero(adj)[1].astype(np.int64)
    de = _per_step_controls(delta_e, params.delta_e, grid)
    dm = _per_step_controls(delta_m, params.delta_m, grid)
    uniforms = stream.uniform_matrix(grid.n_steps, n)
    states = _kernels.virus_graph(
        indptr, indices, states0, params.delta_d, params.delta_c, params.delta_h,
        params.delta_sm, params.lam, params.beta, params.eta, params.q1, params.q2,
        de, dm, grid.h, uniforms,
    )
    return GraphSimResult(grid, states)


# ---------------------------------------------------------------------------
# Pontryagin sweep for the behavioural rates


@dataclasses.dataclass(frozen=True)
class ControlResult:
    """Outcome of the forward-backward control sweep.

    ``objective`` is terminal clean share plus its running integral.
    ``indifferent`` marks a problem whose candidate surface was flat, in
    which case the initial controls are returned unchanged.
    """

    grid: TimeGrid
    delta_e: np.ndarray
    delta_m: np.ndarray
    state_path: Path
    costate_path: Path
    objective: float
    converged: bool
    indifferent: bool
    iterations: int


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _objective(path: Path, grid: TimeGrid) -> float:
    h_vals = path.values[:, 4]
    return float(h_vals[-1] + _trapezoid(h_vals, dx=grid.h))


def _maximize_node(m, p_vec, params, levels: int = 3):
    """Maximize the candidate surface over the unit control square by a
    coarse grid followed by local refinement around the best cell."""
    lo_e, hi_e, lo_m, hi_m = 0.0, 1.0, 0.0, 1.0
    best = (params.delta_e, params.delta_m, -np.inf)
    first_spread = None
    for level in range(levels):
        de = np.linspace(lo_e, hi_e, 101)
        dm = np.linspace(lo_m, hi_m, 101)
        surface = hamiltonian(m, p_vec, params, de[:, None], dm[None, :])
        if level == 0:
            first_spread = float(surface.max() - surface.min())
        i, j = np.unravel_index(int(np.argmax(surface)), surface.shape)
        best = (float(de[i]), float(dm[j]), float(surface[i, j]))
        step_e = (hi_e - lo_e) / 100.0
        step_m = (hi_m - lo_m) / 100.0
        lo_e, hi_e = max(0.0, de[i] - step_e), min(1.0, de[i] + step_e)
        lo_m, hi_m = max(0.0, dm[j] - step_m), min(1.0, dm[j] + step_m)
    return best[0], best[1], first_spread


def optimize_control(
    params: VirusParams,
    m0,
    grid: TimeGrid,
    sweep_iters: int = 40,
    step: float = 0.5,
    tol: float = 1e-4,
) -> ControlResult:
    """Forward-backward sweep for the two behavioural rates.

    Each iteration integrates the shares forward under the current
    controls, the costates backward along that trajectory, maximizes the
    candidate surface pointwise on the control square, and relaxes the
    controls toward the maximizer.  Stops when the control update falls
    below ``tol``; otherwise returns the best iterate found with
    ``converged=False``.
    """
    if not 0.0 < step <= 1.0:
        raise ValueError("relaxation step must lie in (0,1]")
    m0 = as_population(m0)
    t = grid.times()
    de = np.full(grid.n_steps + 1, params.delta_e)
    dm = np.full(grid.n_steps + 1, params.delta_m)
    best: tuple[float, np.ndarray, np.ndarray, Path, Path] | None = None
    converged = False
    indifferent = False
    iterations = 0

    for it in range(sweep_iters):
        iterations = it + 1
        de_fn = lambda s: float(np.interp(s, t, de))
        dm_fn = lambda s: float(np.interp(s, t, dm))
        m_path = simulate_population_ode(params, m0, grid, de_fn, dm_fn)
        obj = _objective(m_path, grid)

        def m_lookup(s):
            pos = min(max((s - grid.t0) / grid.h, 0.0), float(grid.n_steps))
            lo = min(int(pos), grid.n_steps - 1)
            frac = pos - lo
            vals = (1.0 - frac) * m_path.values[lo] + frac * m_path.values[lo + 1]
            vals = vals.clip(0.0, None)
            return vals / vals.sum()

        def back_rhs(s, p_vec):
            sb = grid.t1 + grid.t0 - s
            return -adjoint_rhs(m_lookup(sb), p_vec, params, de_fn(sb), dm_fn(sb))

        p_rev = rk4_integrate(back_rhs, np.array([0.0, 0.0, 0.0, 0.0, 1.0]), grid)
        p_vals = p_rev.values[::-1]
        p_path = Path(grid, p_vals.copy())

        new_de = np.empty_like(de)
        new_dm = np.empty_like(dm)
        spreads = np.empty(grid.n_steps + 1)
        for k in range(grid.n_steps + 1):
            m_k_state = m_path.values[k].clip(0.0, None)
            m_k_state = m_k_state / m_k_state.sum()
            e_k, m_k, spread = _maximize_node(m_k_state, p_vals[k], params)
            new_de[k], new_dm[k], spreads[k] = e_k, m_k, spread

        if best is None or obj > best[0]:
            best = (obj, de.copy(), dm.copy(), m_path, p_path)
        if it == 0 and float(spreads.max()) < 1e-12:
            indifferent = True
            converged = True
            break
        change = max(np.max(np.abs(new_de - de)), np.max(np.abs(new_dm - dm)))
        de = (1.0 - step) * de + step * new_de
        dm = (1.0 - step) * dm + step * new_dm
        if change < tol:
            # evaluate the settled controls once more so the report matches
            de_fn = lambda s: float(np.interp(s, t, de))
            dm_fn = lambda s: float(np.interp(s, t, dm))
            m_path = simulate_population_ode(params, m0, grid, de_fn, dm_fn)
            obj = _objective(m_path, grid)
            if best is None or obj > best[0]:
                best = (obj, de.copy(), dm.copy(), m_path, p_path)
            converged = True
            break

    assert best is not None
    obj, de_b, dm_b, m_path_b, p_path_b = best
    return ControlResult(
        grid=grid,
        delta_e=de_b,
        delta_m=dm_b,
        state_path=m_path_b,
        costate_path=p_path_b,
        objective=obj,
        converged=converged,
        indifferent=indifferent,
        iterations=iterations,
    )
