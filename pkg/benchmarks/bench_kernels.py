"""Time each hot kernel under both backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--scale S]

Each kernel is called once to warm up (JIT compilation for numba), then
timed as the best of ``--repeat`` runs. Outputs of the two backends are
compared before timing so a fast but wrong kernel cannot win.
"""
import argparse
import time

import numpy as np

from tarisk.kernels import loop_impl, numpy_impl


def cases(scale, rng):
    n_ev = 200_000 * scale
    row, col, slot = rng.integers(-1, 21, n_ev), rng.integers(-1, 21, n_ev), rng.integers(0, 2200, n_ev)
    field = rng.poisson(0.3, (2160 * scale // 4, 20, 20)).astype(np.float64)
    lam = rng.uniform(0, 10, 100_000 * scale)
    u = rng.random(lam.size)
    n_t, n_b, n_h = 100, 128, 32
    xw = rng.normal(size=(n_t, n_b, 4 * n_h))
    u_mat = rng.normal(scale=0.2, size=(4 * n_h, n_h))
    ut = np.ascontiguousarray(u_mat.T)
    h0 = np.zeros((n_b, n_h))
    rec = numpy_impl.lstm_recurrence(xw, ut, h0, h0, False)
    dhs = rng.normal(size=(n_t, n_b, n_h))
    xs = rng.normal(size=(4000 * scale, 102))
    ys = rng.normal(size=xs.shape[0])
    xl = (xs - xs.mean(0)) / xs.std(0)
    y_arma = rng.normal(size=(400, 2000))
    return {
        "accumulate_counts": (row, col, slot, 20, 20, 2160),
        "ring_corr k=3": (field, 3),
        "poisson_small": (lam, np.exp(-lam), u),
        "lstm_recurrence train": (xw, ut, h0, h0, False),
        "lstm_recurrence stable": (xw, ut, h0, h0, True),
        "lstm_recurrence_backward": (dhs, rec[2], rec[1], rec[3], h0, u_mat),
        "best_split": (xs, ys, 5),
        "lasso_cd": (xl, ys - ys.mean(), 0.01, 50, 0.0, np.zeros(xl.shape[1])),
        "arma_filter": (y_arma, np.zeros(400), rng.normal(scale=0.03, size=(400, 24)),
                        rng.normal(scale=0.1, size=(400, 1)), 24),
    }


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=int, default=1, help="multiply problem sizes")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, a in cases(args.scale, rng).items():
        fn_name = name.split()[0]
        f_np, f_nb = getattr(numpy_impl, fn_name), getattr(loop_impl, fn_name)
        r_np, r_nb = _first(f_np(*a)), _first(f_nb(*a))  # warm-up and cross-check
        np.testing.assert_allclose(np.asarray(r_np, dtype=float), np.asarray(r_nb, dtype=float),
                                   rtol=1e-8, atol=1e-10)
        t_np = best_of(f_np, a, args.repeat)
        t_nb = best_of(f_nb, a, args.repeat)
        print(f"{name:28s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
