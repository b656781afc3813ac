"""Compare the compiled and numpy life kernels on an exhaustive window sweep.

    python3 benchmarks/bench_life.py [--boards N] [--steps T] [--repeat R]

Every board is a 32x32 blank grid with one 4x4 window stamped from a distinct
code, which is the workload of the macro-alphabet and focal-point sweeps.
"""

import argparse
import sys
import time

import numpy as np

from cagrain import kernels


def workload(n, width=32, height=32):
    boards = np.zeros((n, height), dtype=np.uint64)
    codes = np.arange(n, dtype=np.int64) % (1 << 16)
    return kernels.stamp_window(boards, codes, 14, 14, 4, 4), width


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--boards", type=int, default=1 << 16)
    ap.add_argument("--steps", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    base, width = workload(args.boards)
    backends = [("numpy", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.insert(0, ("cython", kernels.compiled_backend))
    else:
        print("compiled extension not built; timing the numpy backend only", file=sys.stderr)

    results = {}
    for name, mod in backends:
        def run(mod=mod):
            b = base.copy()
            mod.life_run(b, width, args.steps)
            return b
        results[name] = (best_of(run, args.repeat), run())

    ref = results["numpy"][1]
    print(f"{args.boards} boards, {args.steps} steps, best of {args.repeat}")
    for name, (secs, out) in results.items():
        rate = args.boards * args.steps / secs / 1e6
        same = "identical" if np.array_equal(out, ref) else "MISMATCH"
        print(f"{name:>7}: {secs * 1e3:9.2f} ms  {rate:8.2f} M board-steps/s  {same}")
    if "cython" in results:
        print(f"speedup: {results['numpy'][0] / results['cython'][0]:.1f}x")
    return 0 if all(np.array_equal(o, ref) for _, o in results.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
