"""Time the numba kernels against their numpy twins.

Usage: python3 benchmarks/bench_kernels.py [--sizes 100 300 1000] [--repeat 5]

Both implementations are imported from the same module, so the environment
flag does not matter here.  Each row prints the best-of-``repeat`` wall time
and the max abs difference between the two results.
"""
import argparse
import time

import numpy as np

from sinkbary import _kernels as K


def best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(n, rng):
    X = rng.random((n, 2))
    Y = rng.random((n, 2))
    a = rng.dirichlet(np.ones(n))
    b = rng.dirichlet(np.ones(n))
    la, lb = np.log(a), np.log(b)
    C = K.sqdist_np(X, Y)
    CT = np.ascontiguousarray(C.T)
    v = rng.standard_normal(n) * 0.01
    u0 = np.zeros(n)
    eps = 0.05
    row = np.zeros((1, n))
    return {
        "sqdist": (lambda: K.sqdist_np(X, Y), lambda: K.sqdist_nb(X, Y)),
        "softmin": (lambda: K.softmin_np(C, lb, v, eps), lambda: K.softmin_nb(C, lb, v, eps)),
        "potential_eval_grad": (
            lambda: K.potential_eval_grad_np(X, Y, lb, v, eps, True)[1],
            lambda: K.potential_eval_grad_nb(X, Y, lb, v, eps, True)[1],
        ),
        "rbf_sum": (lambda: K.rbf_sum_np(X, Y, a, b, 0.3), lambda: K.rbf_sum_nb(X, Y, a, b, 0.3)),
        "sinkhorn_loop(50 sweeps)": (
            lambda: K.sinkhorn_loop_np(C, CT, la, lb, u0, eps, 0.0, 50, 0, row, 1.0, 1.0)[0],
            lambda: K.sinkhorn_loop_nb(C, CT, la, lb, u0, eps, 0.0, 50, 0, row, 1.0, 1.0)[0],
        ),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 300, 1000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    # compile once outside the timings
    for np_fn, nb_fn in cases(8, rng).values():
        nb_fn()
    print(f"{'kernel':<26}{'n':>6}{'numpy [ms]':>13}{'numba [ms]':>13}{'speedup':>9}{'max diff':>11}")
    for n in args.sizes:
        for name, (np_fn, nb_fn) in cases(n, rng).items():
            t_np, r_np = best_time(np_fn, args.repeat)
            t_nb, r_nb = best_time(nb_fn, args.repeat)
            diff = float(np.max(np.abs(np.asarray(r_np) - np.asarray(r_nb))))
            print(f"{name:<26}{n:>6}{t_np * 1e3:>13.3f}{t_nb * 1e3:>13.3f}{t_np / t_nb:>9.2f}{diff:>11.2e}")


if __name__ == "__main__":
    main()
