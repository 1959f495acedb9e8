"""Compare the compiled and numpy walk kernels on the workloads the package runs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case is timed best-of-``repeat``; results are checked to agree before timing.
"""
import argparse
import math
import time

import numpy as np

from privsmc import kernels, streams
from privsmc.edp import EdpConfig
from privsmc.sprt import SprtConfig


def _table_cell(mod, walks=1000):
    # one reference-table cell: p_phi = 0.64, delta = 0.01, alpha = 0.01, mean noise added to both bounds
    cfg = SprtConfig(0.5, 0.01, 0.01)
    b = cfg.bound + 1 / EdpConfig(cfg, 0.01).rate
    return [mod.bernoulli_walk(streams.stream(0, streams.DATA, i), 0.64, 1, 0,
                               cfg.s_plus, cfg.s_minus, b, -b, cfg.cap) for i in range(walks)]


def _near_zero_drift(mod, walks=50):
    # p_phi = p: long undirected walks, stopped by a cap of 10^5
    cfg = SprtConfig(0.5, 0.001, 0.01)
    return [mod.bernoulli_walk(streams.stream(0, streams.DATA, i), 0.5, 1, 0,
                               cfg.s_plus, cfg.s_minus, cfg.bound, -cfg.bound, 100_000)
            for i in range(walks)]


def _audit_block(mod, pairs=100, samples=20):
    cfg = SprtConfig(0.5, 0.01, 0.01)
    rate = EdpConfig(cfg, 0.05).rate
    out = []
    for i in range(samples):
        L = -math.log(1.0 - streams.stream(0, streams.NOISE, i).random()) / rate
        b = cfg.bound + L
        out.append(mod.pair_walks(streams.stream(0, streams.AUDIT, i), pairs, 0.64, 1, 0,
                                  cfg.s_plus, cfg.s_minus, b, -b, cfg.cap, 1))
    return out


def _counterexample(mod):
    cfg = SprtConfig(0.5, 0.1, 0.01)
    bits = np.ones(10**6, dtype=np.uint8)
    bits[11::2] = 0
    return mod.bits_walk(bits, cfg.s_plus, cfg.s_minus, cfg.bound, -cfg.bound, 10**6)


CASES = {
    "table cell, 1000 walks": _table_cell,
    "zero drift, 50 walks to 1e5": _near_zero_drift,
    "audit, 20 x 100 pairs": _audit_block,
    "bit array, 1e6": _counterexample,
}


def _same(a, b):
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def best_time(fn, mod, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(mod)
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    found = kernels.backends()
    names = sorted(found, key=lambda n: n != "cython")
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(names)}")
    print(f"{'case':32}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in CASES.items():
        results = [fn(found[n]) for n in names]
        if not all(_same(results[0], r) for r in results[1:]):
            raise SystemExit(f"backends disagree on {label!r}")
        times = [best_time(fn, found[n], args.repeat) for n in names]
        row = f"{label:32}" + "".join(f"{t * 1e3:10.1f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[1] / times[0]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
