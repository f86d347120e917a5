"""Hot kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``GHOSTBEAM_NUMBA`` is not
set to ``0``. Both paths are always importable so they can be compared
(see ``benchmarks/bench_kernels.py``).
"""

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("GHOSTBEAM_NUMBA", "1") != "0"

# large-argument expansion coefficients of H_1^(1)(x); truncation error
# below 3e-8 relative for x >= HANKEL_MIN_ARG
_H1_A1 = 3.0 / 8.0
_H1_A2 = -15.0 / 128.0
_H1_A3 = 315.0 / 3072.0
HANKEL_MIN_ARG = 50.0


# --------------------------------------------------------------------------
# coincidence sweep
# --------------------------------------------------------------------------

@njit(cache=True)
def _sweep_numba(e_times, e_index, p_times, p_dark, p_parent, window, dead_time, last):
    n_e = e_times.shape[0]
    n_p = p_times.shape[0]
    used = np.zeros(n_p, dtype=np.bool_)
    pair_e = np.empty(n_e, dtype=np.int64)
    pair_p = np.empty(n_e, dtype=np.int64)
    pair_true = np.empty(n_e, dtype=np.bool_)
    n_pairs = 0
    n_dead = 0
    lo = 0
    for i in range(n_e):
        t = e_times[i]
        while lo < n_p and p_times[lo] < t - window:
            lo += 1
        best = -1
        best_dt = np.inf
        j = lo
        while j < n_p and p_times[j] <= t + window:
            if not used[j]:
                dt = abs(p_times[j] - t)
                if dt < best_dt:
                    best_dt = dt
                    best = j
            j += 1
        if best < 0:
            continue
        if t - last < dead_time:
            n_dead += 1
            continue
        used[best] = True
        last = t
        pair_e[n_pairs] = i
        pair_p[n_pairs] = best
        pair_true[n_pairs] = (not p_dark[best]) and p_parent[best] == e_index[i]
        n_pairs += 1
    return pair_e[:n_pairs], pair_p[:n_pairs], pair_true[:n_pairs], n_dead, last, used


def _sweep_numpy(e_times, e_index, p_times, p_dark, p_parent, window, dead_time, last):
    lo = np.searchsorted(p_times, e_times - window, side="left")
    hi = np.searchsorted(p_times, e_times + window, side="right")
    candidates = np.flatnonzero(hi > lo)
    used = np.zeros(p_times.shape[0], dtype=bool)
    pe, pp, pt = [], [], []
    n_dead = 0
    for i in candidates:
        js = np.arange(lo[i], hi[i])
        js = js[~used[js]]
        if js.size == 0:
            continue
        t = e_times[i]
        best = js[np.argmin(np.abs(p_times[js] - t))]
        if t - last < dead_time:
            n_dead += 1
            continue
        used[best] = True
        last = t
        pe.append(i)
        pp.append(best)
        pt.append((not p_dark[best]) and p_parent[best] == e_index[i])
    return (np.asarray(pe, dtype=np.int64), np.asarray(pp, dtype=np.int64),
            np.asarray(pt, dtype=bool), n_dead, last, used)


def coincidence_sweep(e_times, e_index, p_times, p_dark, p_parent, window, dead_time,
                      last_accept=-np.inf):
    """Pair each electron with the nearest unused photon within ``window``.

    Returns ``(electron_pos, photon_pos, is_true, n_rejected_dead_time,
    last_accept_time, photon_used)``. Dead time is non-paralyzable and
    counted from the last accepted pair; ``last_accept`` carries it over
    from a previous chunk.
    """
    args = (np.ascontiguousarray(e_times, dtype=np.float64),
            np.ascontiguousarray(e_index, dtype=np.int64),
            np.ascontiguousarray(p_times, dtype=np.float64),
            np.ascontiguousarray(p_dark, dtype=np.bool_),
            np.ascontiguousarray(p_parent, dtype=np.int64),
            float(window), float(dead_time), float(last_accept))
    if USE_NUMBA:
        pe, pp, pt, nd, last, used = _sweep_numba(*args)
        return pe, pp, pt, int(nd), float(last), used
    return _sweep_numpy(*args)


# --------------------------------------------------------------------------
# O(N^2) Huygens (Rayleigh-Sommerfeld) summation between parallel lines
# --------------------------------------------------------------------------

@njit(cache=True)
def _huygens_numba(src_y, src_vals, obs_y, distance, k, dy):
    n_obs = obs_y.shape[0]
    n_src = src_y.shape[0]
    out = np.zeros(n_obs, dtype=np.complex128)
    pref = 0.5j * k * distance * dy
    for m in range(n_obs):
        acc = 0.0 + 0.0j
        for n in range(n_src):
            dyy = obs_y[m] - src_y[n]
            r = np.sqrt(distance * distance + dyy * dyy)
            x = k * r
            inv = 1.0 / x
            series = (1.0 + 1j * _H1_A1 * inv - _H1_A2 * inv * inv
                      - 1j * _H1_A3 * inv * inv * inv)
            h1 = np.sqrt(2.0 / (np.pi * x)) * np.exp(1j * (x - 0.75 * np.pi)) * series
            acc += src_vals[n] * h1 / r
        out[m] = pref * acc
    return out


def _huygens_numpy(src_y, src_vals, obs_y, distance, k, dy):
    dyy = obs_y[:, None] - src_y[None, :]
    r = np.sqrt(distance * distance + dyy * dyy)
    x = k * r
    inv = 1.0 / x
    series = 1.0 + 1j * _H1_A1 * inv - _H1_A2 * inv**2 - 1j * _H1_A3 * inv**3
    h1 = np.sqrt(2.0 / (np.pi * x)) * np.exp(1j * (x - 0.75 * np.pi)) * series
    return 0.5j * k * distance * dy * (h1 / r) @ src_vals


def huygens_sum(src_y, src_vals, obs_y, distance, k, dy):
    """Direct 2D Rayleigh-Sommerfeld sum from one line to a parallel line.

    Uses the large-argument expansion of H_1; requires ``k*distance >= 50``.
    """
    if k * distance < HANKEL_MIN_ARG:
        raise ValueError(f"k*distance={k * distance:.1f} below {HANKEL_MIN_ARG}")
    args = (np.ascontiguousarray(src_y, dtype=np.float64),
            np.ascontiguousarray(src_vals, dtype=np.complex128),
            np.ascontiguousarray(obs_y, dtype=np.float64),
            float(distance), float(k), float(dy))
    if USE_NUMBA:
        return _huygens_numba(*args)
    return _huygens_numpy(*args)


# --------------------------------------------------------------------------
# bilinear sampling of a complex grid on concentric circles
# --------------------------------------------------------------------------

@njit(cache=True)
def _circles_numba(values, cx, cy, radii, n_phi):
    ny, nx = values.shape
    out = np.zeros((radii.shape[0], n_phi), dtype=np.complex128)
    for a in range(radii.shape[0]):
        for b in range(n_phi):
            phi = 2.0 * np.pi * b / n_phi
            px = cx + radii[a] * np.cos(phi)
            py = cy + radii[a] * np.sin(phi)
            i0 = int(np.floor(py))
            j0 = int(np.floor(px))
            if i0 < 0 or j0 < 0 or i0 + 1 >= ny or j0 + 1 >= nx:
                continue
            fy = py - i0
            fx = px - j0
            out[a, b] = ((1 - fy) * ((1 - fx) * values[i0, j0] + fx * values[i0, j0 + 1])
                         + fy * ((1 - fx) * values[i0 + 1, j0] + fx * values[i0 + 1, j0 + 1]))
    return out


def _circles_numpy(values, cx, cy, radii, n_phi):
    ny, nx = values.shape
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    px = cx + radii[:, None] * np.cos(phi)[None, :]
    py = cy + radii[:, None] * np.sin(phi)[None, :]
    i0 = np.floor(py).astype(np.int64)
    j0 = np.floor(px).astype(np.int64)
    ok = (i0 >= 0) & (j0 >= 0) & (i0 + 1 < ny) & (j0 + 1 < nx)
    i0c = np.clip(i0, 0, ny - 2)
    j0c = np.clip(j0, 0, nx - 2)
    fy = py - i0
    fx = px - j0
    out = ((1 - fy) * ((1 - fx) * values[i0c, j0c] + fx * values[i0c, j0c + 1])
           + fy * ((1 - fx) * values[i0c + 1, j0c] + fx * values[i0c + 1, j0c + 1]))
    return np.where(ok, out, 0.0).astype(np.complex128)


def sample_circles(values, cx, cy, radii, n_phi):
    """Sample ``values[iy, ix]`` on circles centred at pixel ``(cx, cy)``.

    Radii are in pixels; points falling off the grid sample as zero.
    """
    args = (np.ascontiguousarray(values, dtype=np.complex128), float(cx), float(cy),
            np.ascontiguousarray(radii, dtype=np.float64), int(n_phi))
    if USE_NUMBA:
        return _circles_numba(*args)
    return _circles_numpy(*args)
