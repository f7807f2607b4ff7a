"""Wall-time comparison of the two kernel backends.

Runs every simulation kernel once per backend on a medium workload and
reports the best-of-``--repeat`` wall time, the speedup, and the largest
output discrepancy.  The numba side gets one untimed warmup call so JIT
compilation stays out of the numbers.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]
"""

import argparse
import time

import numpy as np

from mftg._kernels import numpy_impl

try:
    from mftg._kernels import numba_impl
except ImportError:
    numba_impl = None


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def _security(rng, scale):
    n_paths, n_steps, n = int(2048 * scale), 512, 2
    grids = rng.uniform(-0.6, 0.6, (4, n, n_steps + 1))
    weights = rng.uniform(0.1, 1.0, (3, n, n_steps + 1))
    return (
        rng.normal(0.5, 0.2, n_paths), 0.3, 0.1, 0.25, rng.uniform(0.5, 1.5, n),
        grids[0], grids[1], grids[2], weights[0], weights[1], 0.1 * grids[3],
        weights[2], 1.0 / n_steps, rng.standard_normal((n_paths, n_steps)),
    )


def _kuramoto(rng, scale):
    n, n_steps = int(400 * scale), 1000
    kmat = rng.uniform(0.0, 2.0 / n, (n, n))
    np.fill_diagonal(kmat, 0.0)
    return (
        rng.uniform(0.0, 2 * np.pi, n), rng.normal(0.0, 0.5, n), kmat, 0.1,
        np.full(n, 1.0), True, 0.01, rng.standard_normal((n_steps, n)),
    )


_RATES = (0.1, 0.1, 0.05, 0.2, 0.3, 0.4, 0.3, 0.2, 0.2)


def _virus_agents(rng, scale):
    n, n_steps = int(20000 * scale), 200
    return (
        rng.integers(0, 5, n).astype(np.int64), *_RATES,
        np.full(n_steps, 0.5), np.full(n_steps, 0.5), 0.05,
        rng.random((n_steps, n)),
    )


def _virus_graph(rng, scale):
    n, n_steps = int(2000 * scale), 200
    adj = (rng.random((n, n)) < 8.0 / n).astype(np.int64)
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(adj.sum(axis=1), out=indptr[1:])
    indices = np.nonzero(adj)[1].astype(np.int64)
    return (
        indptr, indices, rng.integers(0, 5, n).astype(np.int64), *_RATES,
        np.full(n_steps, 0.4), np.full(n_steps, 0.6), 0.05,
        rng.random((n_steps, n)),
    )


def _rooms(rng, scale):
    n, n_paths, n_steps = 8, int(128 * scale), 240
    e2 = rng.uniform(0.0, 0.05, (n, n))
    np.fill_diagonal(e2, 0.0)
    return (
        rng.uniform(15.0, 20.0, n), rng.uniform(5.0, 12.0, n_steps + 1),
        rng.uniform(0.5, 2.0, n_steps + 1), 0.3, e2, 0.2, 0.4, 22.0, 24.0,
        23.0, 25.0, 4.0, 10.0, 0.1, 0.05,
        rng.standard_normal((n_paths, n_steps, n)),
    )


def _prosumer(rng, scale):
    n_paths, n_steps, d = int(4096 * scale), 600, 200
    return (
        rng.uniform(0.5, 1.5, d + 1), rng.uniform(0.2, 0.8, n_steps + 1),
        rng.uniform(0.0, 0.3, n_steps + 1), rng.uniform(0.0, 0.5, n_steps + 1),
        1.0 / n_steps, d, rng.standard_normal((n_paths, n_steps)),
    )


WORKLOADS = [
    ("security_ensemble", _security),
    ("kuramoto_ensemble", _kuramoto),
    ("virus_agents", _virus_agents),
    ("virus_graph", _virus_graph),
    ("rooms_ensemble", _rooms),
    ("prosumer_ensemble", _prosumer),
]


def _time_best(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3, help="timed runs per kernel")
    parser.add_argument("--scale", type=float, default=1.0, help="workload size multiplier")
    args = parser.parse_args()

    if numba_impl is None:
        print("numba unavailable; timing the numpy backend only\n")
    header = f"{'kernel':<20} {'numpy [s]':>10} {'numba [s]':>10} {'speedup':>8} {'max|diff|':>10}"
    print(header)
    print("-" * len(header))
    for name, build in WORKLOADS:
        kernel_args = build(np.random.default_rng(0), args.scale)
        np_fn = getattr(numpy_impl, name)
        t_np, out_np = _time_best(np_fn, kernel_args, args.repeat)
        if numba_impl is None:
            print(f"{name:<20} {t_np:>10.4f} {'-':>10} {'-':>8} {'-':>10}")
            continue
        nb_fn = getattr(numba_impl, name)
        nb_fn(*kernel_args)  # warmup: compile outside the timer
        t_nb, out_nb = _time_best(nb_fn, kernel_args, args.repeat)
        diff = _max_diff(out_np, out_nb)
        print(f"{name:<20} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x {diff:>10.2e}")


if __name__ == "__main__":
    main()
