"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat N]

The first numba call (compilation) is excluded; each row reports the best
of ``--repeat`` runs and checks that the two paths agree.
"""
import argparse
import time

import numpy as np

from satfed import kernels
from satfed.constellation import build_topology, contact_schedule
from satfed.sweep import schedule_arrays


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def grad_cases(rng):
    f, c, h, n = 10, 10, 32, 64
    X = rng.normal(size=(n, f))
    y = rng.integers(0, c, n)
    p_soft = rng.normal(scale=0.1, size=f * c + c)
    p_mlp = rng.normal(scale=0.1, size=f * h + h + h * c + c)
    yield ("softmax grad (64x10)",
           lambda: kernels.softmax_loss_grad_nb(p_soft, X, y, c),
           lambda: kernels.softmax_loss_grad_np(p_soft, X, y, c))
    yield ("mlp grad (64x10, h=32)",
           lambda: kernels.mlp_loss_grad_nb(p_mlp, X, y, c, h),
           lambda: kernels.mlp_loss_grad_np(p_mlp, X, y, c, h))


def replay_case(mode, label):
    topo = build_topology(100, 50, 10, 2, 0, repair=False)
    windows = contact_schedule(topo, 6000.0, 600.0, 36000.0, 1)
    times, devices, holders, n_holders = schedule_arrays(topo, windows)

    def run(fn):
        dev = np.full((100, 100), -np.inf)
        np.fill_diagonal(dev, 0.0)
        sat = np.full((n_holders, 100), -np.inf)
        counts = fn(times, devices, holders, dev, sat, mode, -1, -1, 6000.0)
        return counts, dev

    return (f"{label} replay (m=100, 50 orbits)",
            lambda: run(kernels.naive_replay_nb), lambda: run(kernels.naive_replay_np))


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    cases = list(grad_cases(np.random.default_rng(0)))
    cases.append(replay_case(kernels.MODE_OWN_ONLY, "own-only"))
    cases.append(replay_case(kernels.MODE_FLOOD, "flood"))
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  agree")
    for name, nb_fn, np_fn in cases:
        nb_fn()  # compile
        t_nb, out_nb = best_of(nb_fn, args.repeat)
        t_np, out_np = best_of(np_fn, max(1, args.repeat // 10) if "replay" in name else args.repeat)
        print(f"{name:34s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:8.1f}  {same(out_nb, out_np)}")


if __name__ == "__main__":
    main()
