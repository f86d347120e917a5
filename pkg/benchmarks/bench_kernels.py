"""Time the numba and numpy paths of the hot kernels side by side.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from ghostbeam import _accel
from ghostbeam.coincidence import RateConfig, simulate_events


def sweep_case():
    log = simulate_events(RateConfig(P_PS=0.3, dark_rate=1e6, duration=1.0, rng_seed=0))
    e = log.kinds == 0
    p = ~e
    args = (log.timestamps[e], log.parent[e], log.timestamps[p], log.kinds[p] == 2,
            log.parent[p], 10.0, 10_000.0, -np.inf)
    return f"coincidence_sweep ({len(log)} records)", _accel._sweep_numba, _accel._sweep_numpy, args


def huygens_case():
    y = np.linspace(-6000, 6000, 1024)
    v = np.exp(-((y / 800) ** 2)).astype(complex)
    args = (y, v, y, 6000.0, 2 * np.pi / 600, y[1] - y[0])
    return "huygens_sum (1024 x 1024)", _accel._huygens_numba, _accel._huygens_numpy, args


def circles_case():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(257, 257)) + 1j * rng.normal(size=(257, 257))
    args = (v, 128.0, 128.0, np.arange(1.0, 127.0), 256)
    return "sample_circles (126 x 256)", _accel._circles_numba, _accel._circles_numpy, args


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    opts = ap.parse_args()
    print(f"{'kernel':40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, slow, args in (sweep_case(), huygens_case(), circles_case()):
        fast(*args)  # compile
        t_fast = min(timeit.repeat(lambda: fast(*args), number=1, repeat=opts.repeat))
        t_slow = min(timeit.repeat(lambda: slow(*args), number=1, repeat=opts.repeat))
        print(f"{name:40s} {1e3 * t_fast:10.2f} {1e3 * t_slow:10.2f} {t_slow / t_fast:8.1f}")


if __name__ == "__main__":
    main()
