"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case is checked for identical output across backends before timing.
"""

from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np

from decentmem import kernels
from decentmem.theory import RM_CLAMP, quadratic_curve


def _cases():
    rng = np.random.default_rng(0)
    table = quadratic_curve().q_table()
    u_rm = rng.random((50, 20_000))
    sims = rng.uniform(-1, 1, 5_000)
    ranks = rng.permutation(5_000).astype(np.int64)
    return {
        "rm_recursion 50x20000": lambda m: m.rm_recursion(np.full(50, 0.5), u_rm, table, 1, *RM_CLAMP),
        "weight_recursion 50x20000": lambda m: m.weight_recursion(np.full(50, 1.0), u_rm, table, 0.5, 0.5, 1.0),
        "topk_above n=5000 k=3 (x200)": lambda m: [m.topk_above(sims, ranks, 3, 0.6) for _ in range(200)],
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, list):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the fallback only")
    results = {}
    for name, fn in _cases().items():
        outs = {b: fn(m) for b, m in backends.items()}
        ref = outs["python"]
        if not all(_same(ref, o) for o in outs.values()):
            raise SystemExit(f"{name}: backends disagree")
        results[name] = {}
        for b, m in backends.items():
            times = []
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                fn(m)
                times.append(time.perf_counter() - t0)
            results[name][b] = statistics.median(times)
    width = max(map(len, results))
    print(f"{'case':<{width}}  {'python':>10}  {'cython':>10}  speedup")
    for name, r in results.items():
        c = r.get("cython")
        cell = f"{c * 1e3:8.2f}ms" if c else "       n/a"
        speed = f"{r['python'] / c:6.1f}x" if c else "    -"
        print(f"{name:<{width}}  {r['python'] * 1e3:8.2f}ms  {cell}  {speed}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
