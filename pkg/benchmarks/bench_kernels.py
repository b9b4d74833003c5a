"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the median wall time per call for each kernel and backend, the
speed-up, and whether both backends returned identical results.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from laenet import kernels
from laenet.scenario import default_scenario


def _cases(rng: np.random.Generator) -> dict:
    sc = default_scenario()
    ch = sc.chan
    n = 64
    users = np.column_stack([rng.uniform(-500, 500, n), rng.uniform(-500, 500, n), np.zeros(n)])
    link_args = ((-100.0, 50.0, 120.0), users, ch.a_los, ch.b_los, ch.gamma_los, ch.gamma_nlos, ch.beta0_lin,
                 np.ones(n), np.full(n, 0.1), np.full(n, 1e6), ch.noise_w)
    rates = rng.uniform(1e6, 1e7, 500)
    t = 4096
    gae_args = (rng.standard_normal(t), rng.standard_normal(t), (rng.random(t) < 0.05).astype(float), 0.99, 0.95)
    m = 16
    d = rng.uniform(3e6, 5e7, m)
    b = np.full(m, 2e6)
    h = rng.uniform(1e-11, 1e-9, m)
    gam = rng.uniform(1.0, 2.0, m)
    bis_args = (100.0, d, b, h, gam, ch.noise_w, 1e-9, 1e-9)
    return {
        "link_state(N=64)": ("link_state", link_args),
        "upload(T=500)": ("upload", (float(rates.sum() * 0.9), rates, 1.0)),
        "gae(T=4096)": ("gae", gae_args),
        "tau_bisect(N=16)": ("tau_bisect", bis_args),
    }


def _time(fn, args, repeat: int, inner: int) -> float:
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        samples.append((time.perf_counter() - t0) / inner)
    return statistics.median(samples)


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--inner", type=int, default=20)
    args = ap.parse_args()
    backs = kernels.backends()
    cases = _cases(np.random.default_rng(0))
    print(f"backends: {', '.join(backs)}")
    print(f"{'kernel':<20}{'python (us)':>14}{'cython (us)':>14}{'speed-up':>10}  identical")
    for label, (name, cargs) in cases.items():
        py = _time(getattr(backs["python"], name), cargs, args.repeat, args.inner)
        if "cython" in backs:
            cy = _time(getattr(backs["cython"], name), cargs, args.repeat, args.inner)
            same = _same(getattr(backs["python"], name)(*cargs), getattr(backs["cython"], name)(*cargs))
            print(f"{label:<20}{py * 1e6:>14.1f}{cy * 1e6:>14.1f}{py / cy:>9.1f}x  {same}")
        else:
            print(f"{label:<20}{py * 1e6:>14.1f}{'n/a':>14}{'':>10}  -")


if __name__ == "__main__":
    main()
