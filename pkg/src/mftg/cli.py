"""Batch experiment runner for the scenario catalog.

Loads a JSON scenario config, validates it fully before computing anything,
runs the scenario deterministically under a seeded stream, and writes the
result table (CSV or JSON) plus a manifest with the config hash, seed,
toolkit version, and wall time.  The same config and seed always produce
byte-identical result files.

Exit codes: 0 success, 2 invalid config, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import os

# honor the thread cap before any BLAS pool spins up
_cap = os.environ.get("MFTG_THREADS", "").strip()
if _cap.isdigit() and int(_cap) > 0:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "NUMBA_NUM_THREADS",
    ):
        os.environ.setdefault(_var, _cap)

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path as FsPath
from typing import Callable, NamedTuple

import numpy as np

from . import __version__, cloud, coupled, delayed, dispatch, epidemics, lq, routing, spatial
from .core import RandomStream, TimeGrid
from .errors import ConfigError, MFTGError

__all__ = [
    "SCENARIO_NAMES",
    "Table",
    "default_config_text",
    "list_scenarios",
    "main",
    "run",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_FORMATS = ("csv", "json")
_CONFIG_KEYS = {"scenario", "seed", "params", "output", "format"}


class Table(NamedTuple):
    """Result of one scenario run: a header plus homogeneous rows."""

    columns: tuple
    rows: list


class _Params:
    """Strict dict reader: typed access, defaults, and no unknown keys."""

    _REQUIRED = object()

    def __init__(self, raw: dict, scenario: str):
        if not isinstance(raw, dict):
            raise ConfigError(f"{scenario}: params must be an object, got {type(raw).__name__}")
        self._raw = raw
        self._scenario = scenario
        self._seen: set = set()

    def _fetch(self, name, default):
        self._seen.add(name)
        if name in self._raw:
            return self._raw[name]
        if default is self._REQUIRED:
            raise ConfigError(f"{self._scenario}: missing required param {name!r}")
        return default

    def number(self, name, default=_REQUIRED) -> float:
        val = self._fetch(name, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{self._scenario}: param {name!r} must be a number")
        val = float(val)
        if not math.isfinite(val):
            raise ConfigError(f"{self._scenario}: param {name!r} must be finite")
        return val

    def integer(self, name, default=_REQUIRED) -> int:
        val = self._fetch(name, default)
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{self._scenario}: param {name!r} must be an integer")
        return int(val)

    def text(self, name, default=_REQUIRED, choices=None) -> str:
        val = self._fetch(name, default)
        if not isinstance(val, str):
            raise ConfigError(f"{self._scenario}: param {name!r} must be a string")
        if choices is not None and val not in choices:
            raise ConfigError(
                f"{self._scenario}: param {name!r} must be one of {sorted(choices)}, got {val!r}"
            )
        return val

    def array(self, name, default=_REQUIRED) -> np.ndarray:
        val = self._fetch(name, default)
        arr = np.asarray(val, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ConfigError(f"{self._scenario}: param {name!r} must be finite")
        return arr

    def mapping(self, name, default=_REQUIRED) -> dict:
        val = self._fetch(name, default)
        if not isinstance(val, dict):
            raise ConfigError(f"{self._scenario}: param {name!r} must be an object")
        return val

    def done(self) -> None:
        unknown = set(self._raw) - self._seen
        if unknown:
            raise ConfigError(f"{self._scenario}: unknown params {sorted(unknown)}")


Runner = Callable[[RandomStream], Table]


def _prep_security(p: _Params) -> Runner:
    n = p.integer("n", 1)
    b = p.array("b", [5.0]).reshape(-1)
    model = lq.SecurityModel(
        n=n,
        a=p.number("a", 0.1),
        abar=p.number("abar", 0.05),
        c=p.number("c", 0.2),
        b=b,
        q=p.number("q", 1.0),
        eps=p.number("eps", 0.1),
        rho=p.number("rho", 0.0001),
        r=p.number("r", 1.0),
    )
    grid = TimeGrid(0.0, p.number("horizon", 1.0), p.integer("steps", 256))
    x0 = p.number("x0", 0.5)
    n_paths = p.integer("n_paths", 256)
    p.done()

    def runner(stream: RandomStream) -> Table:
        sol = lq.solve_security_riccati(model, grid)
        sim = lq.simulate_security(model, sol, x0, n_paths, stream)
        cost = -sim.reward_running.mean(axis=0)
        rows = [
            (t, cost[k], sim.mean.values[k], sim.var.values[k])
            for k, t in enumerate(grid.times())
        ]
        return Table(("t", "cost", "mean", "variance"), rows)

    return runner


def _prep_meanvar(p: _Params) -> Runner:
    n = p.integer("n", 1)
    model = lq.MeanVarianceModel(
        n=n,
        T=p.integer("T", 8),
        a=p.number("a", 0.9),
        abar=p.number("abar", 0.05),
        sigma=p.number("sigma", 0.3),
        b=p.array("b", [1.0]).reshape(-1),
        q=p.number("q", 1.0),
        qbar=p.number("qbar", 0.1),
        r=p.number("r", 1.0),
    )
    m0 = p.number("m0", 1.0)
    v0 = p.number("v0", 0.25)
    if v0 < 0:
        raise ConfigError("meanvar: initial variance must be nonnegative")
    p.done()

    def runner(stream: RandomStream) -> Table:
        sol = lq.solve_mean_variance(model)
        mean, var = m0, v0
        rows = [(0, mean, var)]
        for t in range(model.T):
            drift = model.a + model.abar + float(model.b @ sol.etabar[:, t])
            spread = model.a + float(model.b @ sol.eta[:, t])
            mean = drift * mean
            var = spread * spread * var + model.sigma**2
            rows.append((t + 1, mean, var))
        return Table(("t", "mean", "variance"), rows)

    return runner


def _prep_routing(p: _Params) -> Runner:
    routes = p._fetch("routes", ["left", "middle", "right"])
    if (
        not isinstance(routes, list)
        or len(routes) < 2
        or not all(isinstance(r, str) for r in routes)
    ):
        raise ConfigError("routing: routes must be a list of at least two route names")
    cost_spec = dict(p.mapping("cost", {"kind": "affine", "intercept": [1.0, 1.4, 1.2], "slope": [2.0, 1.0, 1.5]}))
    kind = cost_spec.pop("kind", None)
    if not isinstance(kind, str):
        raise ConfigError("routing: cost.kind must name a cost family")
    cost_fn = routing.make_cost(kind, len(routes), **cost_spec)
    agents = p.integer("agents", 40)
    game = routing.RoutingGame(tuple(routes), cost_fn, n=agents)
    state = routing.StrategyState.uniform(agents, len(routes), rate=p.number("rate", 0.8))
    horizon = p.integer("horizon", 800)
    if horizon < 1:
        raise ConfigError("routing: horizon must be at least 1")
    mode = p.text("mode", "imitative", choices=("imitative", "replicator"))
    p.done()

    def runner(stream: RandomStream) -> Table:
        res = routing.run_learning(game, state, horizon, mode=mode)
        columns = ("round", *(f"share_{r}" for r in routes), "wardrop_gap")
        rows = []
        for k in range(horizon + 1):
            profile = res.weights[k].mean(axis=0)
            costs = np.array([cost_fn(0, u, profile[u]) for u in range(len(routes))])
            used = profile > 1e-9
            gap = float(costs[used].max() - costs.min()) if used.any() else 0.0
            rows.append((k, *profile.tolist(), gap))
        return Table(columns, rows)

    return runner


def _prep_virus(p: _Params) -> Runner:
    rates = p.mapping("rates", {})
    try:
        params = epidemics.default_virus_params(**rates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"virus: invalid rates: {exc}") from exc
    m0 = epidemics.as_population(p.array("m0", [0.2, 0.2, 0.2, 0.2, 0.2]))
    grid = TimeGrid(0.0, p.number("horizon", 20.0), p.integer("steps", 400))
    p.done()

    def runner(stream: RandomStream) -> Table:
        path = epidemics.simulate_population_ode(params, m0, grid)
        rows = [
            (t, *path.values[k].tolist()) for k, t in enumerate(grid.times())
        ]
        return Table(("t", "d1", "d2", "c1", "c2", "h"), rows)

    return runner


def _prep_sync(p: _Params) -> Runner:
    n = p.integer("n", 500)
    if n < 2:
        raise ConfigError("sync: need at least two oscillators")
    coupling = p.mapping("coupling", {"kind": "full", "strength": 2.0})
    kind = coupling.get("kind", "full")
    strength = coupling.get("strength", 1.0)
    blocks = coupling.get("block_sizes")
    extra = set(coupling) - {"kind", "strength", "block_sizes"}
    if extra:
        raise ConfigError(f"sync: unknown coupling keys {sorted(extra)}")
    if kind == "random":
        kmat = None  # sampled from the seeded stream at run time
        coupled.coupling_matrix("full", n, strength)  # validates strength now
    else:
        kmat = coupled.coupling_matrix(kind, n, strength, block_sizes=blocks)
    sigma = p.number("sigma", 0.05)
    omega_spread = p.number("omega_spread", 0.0)
    if omega_spread < 0:
        raise ConfigError("sync: omega_spread must be nonnegative")
    control = p.text("control", "consensus", choices=("none", "consensus"))
    grid = TimeGrid(0.0, p.number("horizon", 10.0), p.integer("steps", 250))
    p.done()

    def runner(stream: RandomStream) -> Table:
        rng = stream.generator()
        theta0 = rng.uniform(0.0, 2.0 * np.pi, n)
        omega = omega_spread * rng.standard_normal(n) if omega_spread > 0 else np.zeros(n)
        mat = (
            kmat
            if kmat is not None
            else coupled.coupling_matrix("random", n, strength, rng=rng)
        )
        ens = coupled.OscillatorEnsemble(theta0=theta0, omega=omega, kmat=mat, sigma=sigma)
        res = coupled.simulate_kuramoto(ens, grid, stream.shifted(1), control=control)
        rows = list(zip(grid.times().tolist(), res.order.values.tolist()))
        return Table(("t", "order"), rows)

    return runner


def _prep_hvac(p: _Params) -> Runner:
    rooms = p.integer("rooms", 6)
    if rooms < 1:
        raise ConfigError("hvac: need at least one room")
    t0 = p.array("t0", 18.0)
    if t0.ndim == 0:
        t0 = np.full(rooms, float(t0))
    exchange = p.number("exchange", 0.05)
    eps2 = np.full((rooms, rooms), exchange)
    np.fill_diagonal(eps2, 0.0)
    band = p.array("band", [23.0, 25.0]).reshape(-1)
    if band.shape != (2,):
        raise ConfigError("hvac: band must be a [low, high] pair")
    network = coupled.ThermalNetwork(
        t0=t0,
        t_ext=p.number("t_ext", 10.0),
        t_ref=p.number("t_ref", 22.0),
        eps1=p.number("eps1", 0.3),
        eps2=eps2,
        eps3=p.number("eps3", 0.2),
        sigma=p.number("sigma", 0.3),
        price=p.number("price", 1.0),
        t_comf=p.number("t_comf", 24.0),
        band=(float(band[0]), float(band[1])),
    )
    law_spec = p.mapping("law", {})
    try:
        law = coupled.ComfortLaw(**law_spec)
    except TypeError as exc:
        raise ConfigError(f"hvac: invalid law: {exc}") from exc
    grid = TimeGrid(0.0, p.number("horizon", 6.0), p.integer("steps", 120))
    n_paths = p.integer("n_paths", 128)
    p.done()

    def runner(stream: RandomStream) -> Table:
        res = coupled.simulate_rooms(network, grid, stream, law=law, n_paths=n_paths)
        columns = (
            "t",
            *(f"mean_room_{i}" for i in range(rooms)),
            *(f"var_room_{i}" for i in range(rooms)),
        )
        rows = [
            (t, *res.mean.values[k].tolist(), *res.var.values[k].tolist())
            for k, t in enumerate(grid.times())
        ]
        return Table(columns, rows)

    return runner


def _prep_dispatch(p: _Params) -> Runner:
    loss_spec = dict(p.mapping("loss", {"kind": "quadratic", "weight": 1.0}))
    kind = loss_spec.pop("kind", None)
    if not isinstance(kind, str):
        raise ConfigError("dispatch: loss.kind must name a loss family")
    loss, loss_prime = dispatch.make_loss(kind, **loss_spec)
    caps = p.array("caps", [1.0, 2.0, 3.0]).reshape(-1)
    model = dispatch.ProducerModel(
        loss=loss,
        loss_prime=loss_prime,
        caps=caps,
        rho=p.number("rho", 0.5),
        maintenance=p.number("maintenance", 0.0),
    )
    lo = p.number("demand_min", 0.0)
    hi = p.number("demand_max", float(caps.sum()))
    n_pts = p.integer("demand_points", 25)
    if not (hi > lo and n_pts >= 2):
        raise ConfigError("dispatch: need demand_max > demand_min and at least 2 points")
    p.done()

    def runner(stream: RandomStream) -> Table:
        columns = ("demand", "total", *(f"s_{k}" for k in range(caps.size)))
        rows = []
        for demand in np.linspace(lo, hi, n_pts):
            res = dispatch.optimal_supply(model, float(demand))
            rows.append((float(demand), res.total, *res.supply.tolist()))
        return Table(columns, rows)

    return runner


def _prep_delay(p: _Params) -> Runner:
    taus = p.array("taus", [1.0 / 3.0, 2.0 / 3.0]).reshape(-1)
    if taus.size < 1 or np.any(taus <= 0):
        raise ConfigError("delay: taus must be positive")
    horizon = p.number("horizon", 1.0)
    steps = p.integer("steps", 60)
    grid = TimeGrid(0.0, horizon, steps)
    for tau in taus:
        ratio = float(tau) / grid.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, abs(ratio)):
            raise ConfigError(
                f"delay: tau={tau} is not a whole number of steps at h={grid.h}"
            )
    model = delayed.DelayedProsumerModel(
        c1=p.number("c1", 1.0),
        c2=p.number("c2", 0.2),
        c4=p.number("c4", 1.0),
        tau=float(taus[0]),
        horizon=horizon,
        mu=p.number("mu", 1.0),
        history=p.number("history", 1.0),
    )
    p.done()

    def runner(stream: RandomStream) -> Table:
        report = delayed.delay_monotonicity_report(model, taus.tolist(), grid)
        rows = []
        for i, tau in enumerate(report.taus):
            for j, t in enumerate(report.times):
                rows.append(
                    (
                        float(tau),
                        float(t),
                        report.costate[i, j],
                        report.control[i, j],
                        report.mean_action[i, j],
                    )
                )
        return Table(("tau", "t", "costate", "control", "mean_action"), rows)

    return runner


def _prep_cloud(p: _Params) -> Runner:
    n = p.integer("n", 5)
    alpha = p.number("alpha", 0.8)
    c = p.number("c", 10.0)
    lo = p.number("price_min", 0.2)
    hi = p.number("price_max", 2.0)
    n_pts = p.integer("price_points", 19)
    if not (0 < lo < hi and n_pts >= 2):
        raise ConfigError("cloud: need 0 < price_min < price_max and at least 2 points")
    cloud.cloud_equilibrium(cloud.CloudGame(n=n, alpha=alpha, c=c, p=lo))
    p.done()

    def runner(stream: RandomStream) -> Table:
        rows = []
        for price in np.linspace(lo, hi, n_pts):
            game = cloud.CloudGame(n=n, alpha=alpha, c=c, p=float(price))
            u = cloud.cloud_equilibrium(game)
            rows.append(
                (
                    float(price),
                    u,
                    n * u,
                    cloud.efficiency_ratio(game, u),
                    cloud.cloud_payoff(game, u, u),
                )
            )
        return Table(("price", "demand_each", "demand_total", "efficiency", "payoff"), rows)

    return runner


def _prep_sharing(p: _Params) -> Runner:
    network = cloud.SharingNetwork(
        eps=p.array("eps", [[0.0, 0.5, 0.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]]),
        thp0=p.array("thp0", [3.0, 1.0, 0.0]).reshape(-1),
        theta=p.number("theta", 1.0),
    )
    iters = p.integer("iters", 500)
    restarts = p.integer("restarts", 3)
    if iters < 1 or restarts < 1:
        raise ConfigError("sharing: iters and restarts must be positive")
    p.done()

    def runner(stream: RandomStream) -> Table:
        res = cloud.sharing_equilibrium(network, iters=iters, restarts=restarts, stream=stream)
        rows = [
            (i, float(network.thp0[i]), res.throughput[i], res.payoffs[i])
            for i in range(network.n_nodes)
        ]
        return Table(("node", "initial", "final", "payoff"), rows)

    return runner


def _prep_meeting(p: _Params) -> Runner:
    model = spatial.MeetingModel(
        x_room=p.array("x_room", [0.0, 0.0]),
        c1=p.number("c1", 4.0),
        c2=p.number("c2", 1.0),
        c3=p.number("c3", 0.0),
        t_bar=p.number("t_bar", 0.25),
        quorum=p.integer("quorum", 3),
        positions=p.array("positions", [[0.4, 0.0], [0.0, 0.4], [2.0, 0.0]]),
        congestion=p.number("congestion", 1.0),
    )
    iters = p.integer("iters", 200)
    damping = p.number("damping", 0.5)
    p.done()

    def runner(stream: RandomStream) -> Table:
        res = spatial.start_time_fixed_point(model, iters=iters, damping=damping)
        rows = [
            ("arrival", i, float(res.arrivals[i]), res.regimes[i])
            for i in range(model.n_agents)
        ]
        rows.extend(("trace", k, float(t), "") for k, t in enumerate(res.trace))
        rows.append(("start", 0, float(res.start_time), ""))
        rows.append(("converged", 0, 1.0 if res.converged else 0.0, ""))
        return Table(("record", "index", "value", "regime"), rows)

    return runner


@dataclasses.dataclass(frozen=True)
class ScenarioSpec:
    name: str
    description: str
    prepare: Callable[[_Params], Runner]


_SCENARIOS = {
    spec.name: spec
    for spec in (
        ScenarioSpec(
            "security",
            "Investment-security ensemble under the equilibrium feedback (t, cost, mean, variance).",
            _prep_security,
        ),
        ScenarioSpec(
            "meanvar",
            "Discrete-time variance-reduction gains and the closed-loop moment recursion.",
            _prep_meanvar,
        ),
        ScenarioSpec(
            "routing",
            "Imitative route-choice learning toward a Wardrop flow on a congestion instance.",
            _prep_routing,
        ),
        ScenarioSpec(
            "virus",
            "Five-compartment malware population ODE under fixed behavioural rates.",
            _prep_virus,
        ),
        ScenarioSpec(
            "sync",
            "Controlled oscillator ensemble and its order-parameter trajectory.",
            _prep_sync,
        ),
        ScenarioSpec(
            "hvac",
            "Thermal comfort regulation across coupled rooms (per-room mean and variance).",
            _prep_hvac,
        ),
        ScenarioSpec(
            "dispatch",
            "Capacity-constrained supply split across plants over a demand sweep.",
            _prep_dispatch,
        ),
        ScenarioSpec(
            "delay",
            "Delayed prosumer market: costate, control, and mean action per delay.",
            _prep_delay,
        ),
        ScenarioSpec(
            "cloud",
            "Resource-renting equilibrium demand and efficiency across a price sweep.",
            _prep_cloud,
        ),
        ScenarioSpec(
            "sharing",
            "Throughput-sharing equilibrium on an altruism graph.",
            _prep_sharing,
        ),
        ScenarioSpec(
            "meeting",
            "Meeting arrival best responses and the quorum start-time fixed point.",
            _prep_meeting,
        ),
    )
}

SCENARIO_NAMES = tuple(_SCENARIOS)


def default_config_text(name: str) -> str:
    """Raw JSON text of the shipped default config for a scenario."""
    if name not in _SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}, expected one of {SCENARIO_NAMES}")
    return (resources.files("mftg") / "configs" / f"{name}.json").read_text(encoding="utf-8")


def list_scenarios() -> list:
    """Catalog rows (name, description, default config resource) in stable order."""
    out = []
    for name, spec in _SCENARIOS.items():
        path = str(resources.files("mftg") / "configs" / f"{name}.json")
        out.append((name, spec.description, path))
    return out


def _validate_config(cfg: dict) -> tuple:
    if not isinstance(cfg, dict):
        raise ConfigError(f"config root must be an object, got {type(cfg).__name__}")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    name = cfg.get("scenario")
    if name not in _SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}, expected one of {SCENARIO_NAMES}")
    seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    fmt = cfg.get("format", "csv")
    if fmt not in _FORMATS:
        raise ConfigError(f"format must be one of {_FORMATS}, got {fmt!r}")
    output = cfg.get("output", ".")
    if not isinstance(output, str):
        raise ConfigError("output must be a directory path string")
    params = cfg.get("params", {})
    return name, seed, fmt, output, params


def _cell_text(value) -> str:
    if isinstance(value, str):
        if "," in value or "\n" in value or '"' in value:
            raise ConfigError(f"cell text {value!r} is not CSV-safe")
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    val = float(value)
    if val == 0.0:
        val = 0.0  # normalize negative zero
    return format(val, ".17g")


def _render_csv(table: Table) -> bytes:
    lines = [",".join(table.columns)]
    for row in table.rows:
        if len(row) != len(table.columns):
            raise ConfigError("row width does not match the header")
        lines.append(",".join(_cell_text(v) for v in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _plain(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def _render_json(name: str, table: Table) -> bytes:
    doc = {
        "scenario": name,
        "columns": list(table.columns),
        "rows": [[_plain(v) for v in row] for row in table.rows],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def _atomic_write(path: FsPath, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def run(
    config_path,
    *,
    seed_override: int | None = None,
    out_dir: str | None = None,
    format_override: str | None = None,
    echo: Callable[[str], None] = print,
) -> int:
    """Execute one scenario config; returns the process exit code."""
    try:
        raw = FsPath(config_path).read_bytes()
    except OSError as exc:
        echo(f"error: cannot read config: {exc}")
        return EXIT_IO
    try:
        cfg = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        echo(f"error: config is not valid JSON: {exc}")
        return EXIT_CONFIG

    try:
        name, seed, fmt, output, params = _validate_config(cfg)
        if seed_override is not None:
            if seed_override < 0:
                raise ConfigError(f"seed must be nonnegative, got {seed_override}")
            seed = seed_override
        if format_override is not None:
            fmt = format_override
        if out_dir is not None:
            output = out_dir
        runner = _SCENARIOS[name].prepare(_Params(params, name))
    except (MFTGError, ValueError, TypeError) as exc:
        echo(f"error: invalid config: {exc}")
        return EXIT_CONFIG

    started = time.perf_counter()
    try:
        table = runner(RandomStream(seed))
    except (MFTGError, ValueError, ArithmeticError) as exc:
        echo(f"error: scenario {name} failed: {exc}")
        return EXIT_NUMERIC
    wall = time.perf_counter() - started

    result_name = f"{name}.{fmt}"
    manifest = {
        "scenario": name,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": seed,
        "version": __version__,
        "format": fmt,
        "result_file": result_name,
        "rows": len(table.rows),
        "wall_time_seconds": wall,
    }
    try:
        out_root = FsPath(output)
        out_root.mkdir(parents=True, exist_ok=True)
        payload = _render_csv(table) if fmt == "csv" else _render_json(name, table)
        _atomic_write(out_root / result_name, payload)
        _atomic_write(
            out_root / f"{name}_manifest.json",
            (json.dumps(manifest, indent=2) + "\n").encode("utf-8"),
        )
    except OSError as exc:
        echo(f"error: cannot write results: {exc}")
        return EXIT_IO

    echo(
        f"wrote {out_root / result_name} ({len(table.rows)} rows) "
        f"and {name}_manifest.json in {wall:.3f}s"
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mftg",
        description="Run a scenario config and write CSV/JSON results with a manifest.",
    )
    parser.add_argument("--config", help="path to a scenario config JSON file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (default: config 'output' or '.')")
    parser.add_argument("--format", choices=_FORMATS, help="override the output format")
    parser.add_argument(
        "--list", action="store_true", help="list available scenarios and exit"
    )
    args = parser.parse_args(argv)

    cap = os.environ.get("MFTG_THREADS")
    if cap is not None and (not cap.strip().isdigit() or int(cap) < 1):
        print(f"error: MFTG_THREADS must be a positive integer, got {cap!r}", file=sys.stderr)
        return EXIT_CONFIG

    if args.list:
        for name, description, path in list_scenarios():
            print(f"{name:<10} {description}")
            print(f"{'':<10} default: {path}")
        return EXIT_OK
    if not args.config:
        print("error: --config is required unless --list is given", file=sys.stderr)
        return EXIT_CONFIG
    return run(
        args.config,
        seed_override=args.seed,
        out_dir=args.out,
        format_override=args.format,
    )


if __name__ == "__main__":
    sys.exit(main())
