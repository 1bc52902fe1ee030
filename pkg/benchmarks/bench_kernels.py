"""Time the compiled and pure-NumPy kernels on the same inputs.

Usage::

    python benchmarks/bench_kernels.py [--T 20000] [--d 2 4] [--repeat 5]

Prints one line per (kernel, d) with the best-of-``repeat`` wall time for
each backend and the speedup.  Outputs are also checked for agreement.
"""
import argparse
import time

import numpy as np

from tvlds import kernels


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _inputs(d, T, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    A *= 0.8 / max(abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((d, d))
    Q = B @ B.T / d + 0.1 * np.eye(d)
    xs = rng.standard_normal((T, d))
    ys = rng.standard_normal(T)
    noise = rng.standard_normal((T - 1, d))
    return A, Q, xs, ys, noise


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=20_000)
    ap.add_argument("--d", type=int, nargs="+", default=[1, 2, 4])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if "cython" not in kernels.BACKENDS:
        print("compiled backend not available; only the NumPy fallback is installed")
    names = sorted(kernels.BACKENDS)
    print(f"T={args.T}, best of {args.repeat}; backends: {', '.join(names)}")
    print(f"{'kernel':<14}{'d':>3}" + "".join(f"{n + ' [ms]':>16}" for n in names) + f"{'speedup':>10}")
    for d in args.d:
        A, Q, xs, ys, noise = _inputs(d, args.T)
        m0, P0 = np.zeros(d), np.eye(d)
        filt = kernels.kalman_filter(xs, ys, A, Q, 0.25, m0, P0, backend="python")
        jobs = {
            "ar_states": lambda b: kernels.ar_states(A, m0 + 1.0, noise, backend=b),
            "kalman_filter": lambda b: kernels.kalman_filter(xs, ys, A, Q, 0.25, m0, P0, backend=b),
            "rts_smoother": lambda b: kernels.rts_smoother(*filt[:4], A, backend=b),
        }
        for kname, job in jobs.items():
            times, outs = {}, {}
            for b in names:
                times[b], outs[b] = _best(lambda: job(b), args.repeat)
            if len(names) > 1:
                a, c = outs["python"], outs["cython"]
                a = a if isinstance(a, tuple) else (a,)
                c = c if isinstance(c, tuple) else (c,)
                for u, v in zip(a, c):
                    np.testing.assert_allclose(u, v, rtol=1e-8, atol=1e-10)
                speed = f"{times['python'] / times['cython']:>9.1f}x"
            else:
                speed = f"{'-':>10}"
            print(f"{kname:<14}{d:>3}" + "".join(f"{times[n] * 1e3:>16.2f}" for n in names) + speed)


if __name__ == "__main__":
    main()
