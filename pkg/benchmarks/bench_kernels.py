"""Benchmark the numba kernels against the pure-numpy fallback.

Runs each backend in a subprocess (the backend is fixed at import time by
HIERLLP_BACKEND) and prints a side-by-side table:

    python3 benchmarks/bench_kernels.py
"""

import argparse
import json
import os
import subprocess
import sys
import time


def run_suite(repeats: int) -> dict:
    import numpy as np

    from hierllp import kernels

    rng = np.random.default_rng(0)
    sizes = {
        "soft_threshold 48x10": (rng.normal(size=(48, 10)), 0.1),
        "soft_threshold 256x64": (rng.normal(size=(256, 64)), 0.1),
    }
    results = {"backend": kernels.BACKEND, "timings": {}}

    def clock(name, fn, *args):
        fn(*args)  # warm-up (JIT compile on the numba path)
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn(*args)
        results["timings"][name] = (time.perf_counter() - t0) / repeats

    for name, (x, lam) in sizes.items():
        clock(name, kernels.soft_threshold, x, lam)

    z = rng.normal(size=200)
    clock("sparsemax k=200", kernels.sparsemax, z)

    D = rng.normal(size=(32, 48))
    kernels.normalize_columns(D)
    F = rng.normal(size=(32, 10))
    mu = float(np.linalg.norm(D, ord=2) ** 2)
    clock("ista 300 iters 32x48", kernels.ista, D, F, 0.1, mu, 300)

    p = rng.normal(size=(64, 64))
    v = np.zeros_like(p)
    g = rng.normal(size=(64, 64))
    clock("momentum_step 64x64", kernels.momentum_step,
          p.reshape(-1), v.reshape(-1), g.reshape(-1), 0.005, 0.9, 5e-4)
    return results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        print(json.dumps(run_suite(args.repeats)))
        return 0

    rows = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, HIERLLP_BACKEND=backend)
        out = subprocess.run([sys.executable, os.path.abspath(__file__), "--worker",
                              "--repeats", str(args.repeats)],
                             env=env, capture_output=True, text=True, check=True)
        data = json.loads(out.stdout.strip().splitlines()[-1])
        if data["backend"] != backend:
            print(f"warning: requested {backend}, got {data['backend']} "
                  "(numba unavailable?)", file=sys.stderr)
        rows[backend] = data["timings"]

    names = list(rows["numpy"])
    width = max(len(n) for n in names)
    print(f"{'kernel'.ljust(width)}  {'numpy':>12}  {'numba':>12}  speedup")
    for name in names:
        a, b = rows["numpy"][name], rows["numba"][name]
        print(f"{name.ljust(width)}  {a * 1e6:>10.1f}us  {b * 1e6:>10.1f}us  "
              f"{a / b:>6.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
