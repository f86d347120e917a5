import os
import subprocess
import sys

import numpy as np
import pytest

from ghostbeam import _accel
from ghostbeam.coincidence import RateConfig, correlate, simulate_events


def _sweep_args(seed=0):
    log = simulate_events(RateConfig(P_PS=0.5, dark_rate=2e5, duration=0.02, rng_seed=seed))
    e = log.kinds == 0
    p = ~e
    return (log.timestamps[e], log.parent[e], log.timestamps[p], log.kinds[p] == 2,
            log.parent[p], 10.0, 1000.0, -np.inf)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sweep_paths_agree(seed):
    args = _sweep_args(seed)
    a = _accel._sweep_numba(*args)
    b = _accel._sweep_numpy(*args)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(np.asarray(x), np.asarray(y))


def test_huygens_paths_agree():
    y = np.linspace(-3000, 3000, 301)
    v = np.exp(-((y / 700) ** 2)) * np.exp(0.003j * y)
    k = 2 * np.pi / 600
    a = _accel._huygens_numba(y, v.astype(complex), y, 6000.0, k, y[1] - y[0])
    b = _accel._huygens_numpy(y, v.astype(complex), y, 6000.0, k, y[1] - y[0])
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14 * np.abs(b).max())


def test_huygens_short_distance_rejected():
    with pytest.raises(ValueError):
        _accel.huygens_sum(np.zeros(2), np.zeros(2), np.zeros(2), 1.0, 1.0, 1.0)


def test_circle_paths_agree():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(40, 50)) + 1j * rng.normal(size=(40, 50))
    radii = np.arange(1.0, 30.0)
    a = _accel._circles_numba(v, 24.3, 19.7, radii, 64)
    b = _accel._circles_numpy(v, 24.3, 19.7, radii, 64)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def test_env_flag_selects_numpy():
    code = "from ghostbeam import _accel; print(_accel.USE_NUMBA)"
    env = dict(os.environ, GHOSTBEAM_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "False"


def test_correlate_same_under_both_paths(monkeypatch):
    log = simulate_events(RateConfig(P_PS=0.5, dark_rate=1e5, duration=0.02, rng_seed=9))
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    a = correlate(log, 10.0, 500.0)
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    b = correlate(log, 10.0, 500.0)
    assert (a.true, a.accidental, a.dead_time_rejected) == (b.true, b.accidental, b.dead_time_rejected)
