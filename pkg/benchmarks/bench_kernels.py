"""Numba vs numpy kernels, one at a time and inside full model training.

    python3 benchmarks/bench_kernels.py [--repeats 20] [--rows 2000]

The first numba call of each kernel compiles (or loads from cache) and is
excluded. End-to-end timings swap the kernel functions on the module, which
is what the learners look up at call time.
"""

import argparse
import statistics
import time

import numpy as np

from appnetwatch import crossfeature as cf
from appnetwatch import features, kernels, sim


def _inputs(n, rng):
    xs = np.sort(rng.integers(0, n // 4, n).astype(np.float64))
    ys = rng.normal(size=n)
    codes = rng.integers(0, 4, n).astype(np.int64)
    keys = rng.integers(0, 50, n).astype(np.int64)
    # full tree of depth 6 over 8 columns for routing
    depth, width = 6, 8
    n_nodes = 2 ** (depth + 1) - 1
    left = np.full(n_nodes, -1, dtype=np.int64)
    right = np.full(n_nodes, -1, dtype=np.int64)
    internal = 2 ** depth - 1
    left[:internal] = 2 * np.arange(internal) + 1
    right[:internal] = 2 * np.arange(internal) + 2
    feature = rng.integers(0, width, n_nodes).astype(np.int64)
    threshold = rng.normal(size=n_nodes)
    is_cat = np.zeros(n_nodes, dtype=np.bool_)
    X = rng.normal(size=(n, width))
    return {
        "best_sse_split": (xs, ys, 2.0),
        "entropy_split_scan": (xs, codes, 4, 2.0),
        "loo_sse": (keys, ys),
        "route_rows": (feature, threshold, is_cat, left, right, X),
    }


def _median_ms(fn, args, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def _use(table):
    for name, fn in table.items():
        setattr(kernels, name, fn)


def _train_ms(vectors, schema, learner, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        cf.train_and_calibrate(vectors, schema, learner)
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--rows", type=int, default=2000)
    args = ap.parse_args(argv)
    if not kernels.NUMBA_KERNELS:
        print("numba is not installed; nothing to compare")
        return 0

    rng = np.random.default_rng(0)
    inputs = _inputs(args.rows, rng)
    print(f"kernel timings, {args.rows} rows, median of {args.repeats} (ms)")
    print(f"{'kernel':20s}{'numpy':>10s}{'numba':>10s}{'speedup':>10s}")
    for name, call_args in inputs.items():
        np_fn, nb_fn = kernels.NUMPY_KERNELS[name], kernels.NUMBA_KERNELS[name]
        nb_fn(*call_args)  # compile
        t_np = _median_ms(np_fn, call_args, args.repeats)
        t_nb = _median_ms(nb_fn, call_args, args.repeats)
        print(f"{name:20s}{t_np:10.3f}{t_nb:10.3f}{t_np / t_nb:9.1f}x")

    profile = sim.preset_profiles()["messenger"]
    vectors = features.build_vectors(sim.simulate_trace(profile, 21600, 1), end_ts=21600)[10:160]
    print(f"\ntrain + calibrate on {len(vectors)} vectors, median of {args.repeats} (ms)")
    print(f"{'learner/subset':20s}{'numpy':>10s}{'numba':>10s}{'speedup':>10s}")
    original = {name: getattr(kernels, name) for name in kernels.NUMPY_KERNELS}
    try:
        for learner in cf.LEARNERS:
            for subset in ("1", "2", "full"):
                schema = features.get_schema(subset)
                _use(kernels.NUMBA_KERNELS)
                cf.train_and_calibrate(vectors, schema, learner)
                t_nb = _train_ms(vectors, schema, learner, args.repeats)
                _use(kernels.NUMPY_KERNELS)
                t_np = _train_ms(vectors, schema, learner, args.repeats)
                print(f"{learner + '/' + subset:20s}{t_np:10.1f}{t_nb:10.1f}{t_np / t_nb:9.1f}x")
    finally:
        _use(original)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
