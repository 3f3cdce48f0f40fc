"""Time every hot kernel on the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--paths 10000]

JIT compilation is triggered once before timing, so the numbers are
steady-state.  Each line reports the best of ``--repeat`` runs and whether the
two backends agree.
"""

import argparse
import time

import numpy as np

from stochriemann import _kernels as K


def cases(m, rng):
    n = 256
    paths = np.cumsum(rng.standard_normal((m, n + 1)), axis=1)
    t = rng.uniform(0, n - 1e-9, 4096)
    idx = t.astype(np.int64)
    nd = 2000
    lower = np.full(nd, -0.3)
    upper = np.full(nd, -0.3)
    diag = np.full(nd, 1.6)
    return {
        "kyfan_rows": (K.kyfan_rows, (rng.standard_normal((64, m)),)),
        "subset_sums": (K.subset_sums, (rng.standard_normal((10, m)),)),
        "gather_lerp": (K.gather_lerp, (paths, idx, t - idx)),
        "row_dot": (K.row_dot, (rng.standard_normal((m, n)), rng.standard_normal((n, 64)))),
        "weighted_rows": (K.weighted_rows, (rng.standard_normal((m, n)), rng.standard_normal(n))),
        "tridiag_solve": (K.tridiag_solve, (lower, diag, upper, rng.standard_normal((nd, 64)))),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--paths", type=int, default=10_000)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    if not K.HAS_NUMBA:
        print("numba is not installed; only the numpy backend can be timed")
    print(f"{'kernel':<15} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  agree")
    for name, (fn, fargs) in cases(args.paths, rng).items():
        with K.use_backend("numpy"):
            t_np, ref = best_of(fn, fargs, args.repeat)
        if not K.HAS_NUMBA:
            print(f"{name:<15} {1e3 * t_np:>10.3f}")
            continue
        with K.use_backend("numba"):
            fn(*fargs)  # compile
            t_nb, out = best_of(fn, fargs, args.repeat)
        agree = np.allclose(out, ref, rtol=1e-12, atol=1e-12)
        print(f"{name:<15} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} {t_np / t_nb:>8.2f}  {agree}")


if __name__ == "__main__":
    main()
