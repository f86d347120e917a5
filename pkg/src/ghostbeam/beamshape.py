"""Electron/near-field coupling, the conditional electron transmission and
orbital-angular-momentum analysis of ring-resonator vortex fields."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as C
from scipy import special

from . import _accel
from .errors import GeometryError, TruncationError
from .fields import ComplexField2D, SourceParams
from .scene import RingResonator, SlabScene

TAIL_TOL = 1e-6
J1_MAX = 0.5818652242815453


@dataclass
class BetaMap:
    """Coupling ``beta`` over the transverse electron coordinate.

    ``values[iy, ix]`` sits at ``origin + (ix*dx, iy*dy)`` (nm).
    """

    values: np.ndarray
    dx: float
    dy: float
    omega0: float
    v: float  # m/s
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("beta map contains non-finite values")

    def to_field(self) -> ComplexField2D:
        return ComplexField2D(self.values, self.dx, self.dy, self.origin)

    def save(self, path) -> None:
        self.to_field().save(path)


@dataclass
class OamSpectrum:
    weights: dict[int, float]
    dominant_l: int = field(init=False)

    def __post_init__(self):
        self.dominant_l = max(self.weights, key=lambda l: (self.weights[l], -abs(l)))

    @property
    def mean(self) -> float:
        return float(sum(l * w for l, w in self.weights.items()))

    def get(self, l: int) -> float:
        return self.weights.get(l, 0.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# dominant_l={self.dominant_l}\n# mean_l={self.mean:.12g}\n")
            fh.write("l,weight\n")
            for l in sorted(self.weights):
                fh.write(f"{l},{self.weights[l]:.15g}\n")

    @classmethod
    def from_csv(cls, path) -> "OamSpectrum":
        weights = {}
        with open(path) as fh:
            for line in fh:
                if line.startswith("#") or line.startswith("l,"):
                    continue
                l, w = line.strip().split(",")
                weights[int(l)] = float(w)
        return cls(weights)


# ---------------------------------------------------------------------------
# coupling integral
# ---------------------------------------------------------------------------

def _unit_moments(theta: np.ndarray):
    """``int_0^1 e^{i theta s} ds`` and ``int_0^1 s e^{i theta s} ds``."""
    theta = np.asarray(theta, dtype=float)
    m0 = np.empty(theta.shape, dtype=complex)
    m1 = np.empty(theta.shape, dtype=complex)
    small = np.abs(theta) < 0.5
    t = theta[small]
    # power series: sum_m (i t)^m / (m! (n + m + 1))
    term = np.ones_like(t, dtype=complex)
    s0 = np.zeros_like(term)
    s1 = np.zeros_like(term)
    for m in range(14):
        s0 += term / (m + 1)
        s1 += term / (m + 2)
        term = term * (1j * t) / (m + 1)
    m0[small] = s0
    m1[small] = s1
    t = theta[~small]
    e = np.exp(1j * t)
    m0[~small] = (e - 1) / (1j * t)
    m1[~small] = e / (1j * t) + (e - 1) / t**2
    return m0, m1


def oscillatory_weights(z_m: np.ndarray, alpha: float) -> np.ndarray:
    """Weights ``w`` with ``sum_k f_k w_k = int f(z) exp(i alpha z) dz``.

    ``f`` is taken piecewise linear between the (nondecreasing) nodes,
    and each piece is integrated exactly against the oscillating factor.
    Repeated nodes mark discontinuities. With ``alpha = 0`` this is the
    trapezoidal rule.
    """
    z = np.asarray(z_m, dtype=float)
    h = np.diff(z)
    if np.any(h < 0):
        raise ValueError("z nodes must be nondecreasing")
    m0, m1 = _unit_moments(alpha * h)
    phase = np.exp(1j * alpha * z[:-1])
    left = h * phase * (m0 - m1)
    right = h * phase * m1
    w = np.zeros(z.size, dtype=complex)
    w[:-1] += left
    w[1:] += right
    return w


def coupling_integral(Ez, z_nm, omega0: float, v: float, check_tails: bool = True) -> np.ndarray:
    """``(e / hbar omega0) * int Ez exp(i omega0 z / v) dz`` over the last axis.

    ``Ez`` in V/m, ``z_nm`` in nm, ``v`` in m/s. Linear in ``Ez``.
    """
    Ez = np.asarray(Ez, dtype=np.complex128)
    z = np.asarray(z_nm, dtype=float) * 1e-9
    if Ez.shape[-1] != z.size:
        raise ValueError("last axis of Ez must match z")
    if check_tails:
        peak = float(np.max(np.abs(Ez))) if Ez.size else 0.0
        edge = max(float(np.max(np.abs(Ez[..., 0]))), float(np.max(np.abs(Ez[..., -1]))))
        if peak > 0 and edge > TAIL_TOL * peak:
            raise TruncationError(
                f"field at the z boundary is {edge / peak:.2e} of its peak; extend the z range")
    w = oscillatory_weights(z, omega0 / v)
    return (C.e / (C.hbar * omega0)) * (Ez @ w)


def pinem_beta(Ez, z_nm, omega0: float, v: float, dx: float = 1.0, dy: float = 1.0,
               origin=(0.0, 0.0), check_tails: bool = True) -> BetaMap:
    """Coupling map from ``Ez[iy, ix, iz]``.

    Parameters
    ----------
    Ez : array, shape (ny, nx, nz)
        Longitudinal near field (V/m) sampled along the electron path.
    z_nm : array, shape (nz,)
        Path coordinate (nm); may be non-uniform.
    omega0 : float
        Angular frequency (rad/s).
    v : float
        Electron speed (m/s).

    Raises
    ------
    TruncationError
        If the field at either z boundary exceeds 1e-6 of its peak.
    """
    Ez = np.asarray(Ez)
    if Ez.ndim != 3:
        raise ValueError("Ez must have shape (ny, nx, nz)")
    beta = coupling_integral(Ez, z_nm, omega0, v, check_tails)
    return BetaMap(beta, dx, dy, omega0, v, origin)


def transmission(beta):
    """Single-quantum electron transmission ``J1(|beta|) exp(i arg(-beta))``."""
    beta = np.asarray(beta, dtype=np.complex128)
    out = special.j1(np.abs(beta)) * np.exp(1j * np.angle(-beta))
    return out if out.ndim else complex(out)


# ---------------------------------------------------------------------------
# ring resonator vortex
# ---------------------------------------------------------------------------

def ring_field(x, y, center, radii, k: float, l: int) -> np.ndarray:
    """Incoming vortex field of charge ``l`` launched by concentric rings.

    Each ring of radius ``R`` is a line source with azimuthal phase
    ``e^{i l phi}``; summing the incoming (``H^(2)``) cylindrical Green's
    function around it gives ``2 pi R H_l(kR) J_l(kr)`` inside the ring and
    ``2 pi R J_l(kR) H_l(kr)`` outside.
    """
    dx = np.asarray(x, dtype=float) - center[0]
    dy = np.asarray(y, dtype=float) - center[1]
    r = np.hypot(dx, dy)
    phi = np.arctan2(dy, dx)
    out = np.zeros(np.broadcast(dx, dy).shape, dtype=np.complex128)
    for R in radii:
        inside = r <= R
        kr = k * r
        jr = special.jv(l, kr)
        with np.errstate(invalid="ignore", divide="ignore"):
            hr = np.where(inside, 0.0, special.hankel2(l, np.where(inside, 1.0, kr)))
        term = np.where(inside, special.hankel2(l, k * R) * jr, special.jv(l, k * R) * hr)
        out += 2 * math.pi * R * term
    return out * np.exp(1j * l * phi)


@dataclass
class VortexScene:
    reverse_field: ComplexField2D
    beta: BetaMap
    l: int
    kappa: float  # 1/nm

    def electron(self) -> ComplexField2D:
        """Post-selected electron wave: the incident beam times T_e(R)."""
        return ComplexField2D(transmission(self.beta.values), self.beta.dx, self.beta.dy,
                              self.beta.origin)


def ring_vortex_scene(n_rings: int, scene: SlabScene, l: int = 1, params: SourceParams | None = None,
                      beta_peak: float = 0.1, fine_step: float | None = None,
                      z_step: float = 20.0) -> VortexScene:
    """Reverse SPP solution for a detected circularly polarized photon.

    Builds the charge-``l`` incoming vortex of ``n_rings`` rings spaced by
    ``lambda_spp`` over the slab, extends it out of plane with the bound
    decay ``exp(-kappa |z|)`` and integrates the coupling along the
    electron path over the central disc, scaled so ``max |beta| = beta_peak``.
    """
    obj = scene.object
    if not isinstance(obj, RingResonator):
        raise GeometryError("scene object is not a ring resonator")
    lam = scene.lambda_spp
    if abs(obj.spacing - lam) > 1e-9 * lam:
        raise GeometryError("ring spacing differs from lambda_spp; resonance condition violated")
    if n_rings < 1:
        raise GeometryError("need at least one ring")
    if l not in (1, -1):
        raise ValueError("only l = +1 and l = -1 channels are modelled")
    if params is None:
        params = SourceParams.from_photon_energy(200.0, 2.0, lam)
    k = scene.k_spp
    k0 = params.omega / C.c * 1e-9  # 1/nm
    if k0 >= k:
        raise GeometryError("SPP wavevector must exceed the free-space one for a bound mode")
    kappa = math.sqrt(k * k - k0 * k0)
    radii = [n * obj.spacing for n in range(1, n_rings + 1)]

    X, Y = np.meshgrid(scene.x_grid, scene.y_grid)
    rev = ComplexField2D(ring_field(X, Y, obj.center, radii, k, l), scene.step, scene.step,
                         (float(scene.x_grid[0]), float(scene.y_grid[0])))

    step = fine_step if fine_step is not None else lam / 32
    m = int(math.floor(radii[0] / step + 1e-9))
    u = np.arange(-m, m + 1) * step
    E2d = ring_field(obj.center[0] + u[None, :], obj.center[1] + u[:, None], obj.center, radii, k, l)
    zmax = math.ceil(-math.log(TAIL_TOL / 10) / kappa / z_step) * z_step
    z = np.arange(-zmax, zmax + z_step / 2, z_step)
    Ez = E2d[:, :, None] * np.exp(-kappa * np.abs(z))[None, None, :]
    beta = pinem_beta(Ez, z, params.omega, params.v_si, step, step,
                      (obj.center[0] - m * step, obj.center[1] - m * step))
    peak = np.max(np.abs(beta.values))
    beta.values *= beta_peak / peak
    return VortexScene(rev, beta, l, kappa)


# ---------------------------------------------------------------------------
# OAM analysis
# ---------------------------------------------------------------------------

def _values_of(field) -> tuple[np.ndarray, float]:
    if isinstance(field, (ComplexField2D, BetaMap)):
        return field.values, field.dx
    return np.asarray(field, dtype=np.complex128), 1.0


def _centre(values: np.ndarray) -> tuple[float, float]:
    ny, nx = values.shape
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    p = np.abs(values) ** 2
    tot = p.sum()
    if tot == 0:
        return cx, cy
    gx = float((p.sum(axis=0) * np.arange(nx)).sum() / tot)
    gy = float((p.sum(axis=1) * np.arange(ny)).sum() / tot)
    if math.hypot(gx - cx, gy - cy) > 1.0:
        warnings.warn(f"field centroid is {math.hypot(gx - cx, gy - cy):.2f} px off the grid "
                      "centre; recentring on the centroid", UserWarning, stacklevel=3)
        return gx, gy
    return cx, cy


def oam_analyze(field, n_phi: int = 256, l_max: int = 16) -> OamSpectrum:
    """Azimuthal decomposition on concentric circles about the field centre.

    Each circle (1 px radial spacing, bilinear sampling) is Fourier
    analysed in angle; the power in each charge is accumulated with the
    circumference weight ``r``. Weights are normalized over
    ``-l_max..l_max``.
    """
    values, _ = _values_of(field)
    cx, cy = _centre(values)
    ny, nx = values.shape
    r_max = min(cx, cy, nx - 1 - cx, ny - 1 - cy) - 1
    radii = np.arange(1.0, math.floor(r_max) + 1)
    if radii.size == 0:
        raise ValueError("field too small for azimuthal analysis")
    samples = _accel.sample_circles(values, cx, cy, radii, n_phi)
    coef = np.fft.fft(samples, axis=1) / n_phi
    power = (np.abs(coef) ** 2 * radii[:, None]).sum(axis=0)
    ls = np.fft.fftfreq(n_phi, 1.0 / n_phi).astype(int)
    sel = np.abs(ls) <= l_max
    total = power[sel].sum()
    if total == 0:
        raise ValueError("field is identically zero")
    return OamSpectrum({int(l): float(p / total) for l, p in sorted(zip(ls[sel], power[sel]))})


def phase_winding(field, radius: float, n: int = 720, center=None) -> float:
    """Phase circulation (rad) around a circle of ``radius`` px."""
    values, _ = _values_of(field)
    if center is None:
        ny, nx = values.shape
        center = ((nx - 1) / 2.0, (ny - 1) / 2.0)
    ring = _accel.sample_circles(values, center[0], center[1], np.array([radius]), n)[0]
    d = np.angle(np.roll(ring, -1) / ring)
    return float(d.sum())


def mixture_spectrum(*spectra: OamSpectrum) -> OamSpectrum:
    """Equal-weight incoherent mixture of post-selected channels."""
    keys = sorted(set().union(*(s.weights for s in spectra)))
    return OamSpectrum({l: float(np.mean([s.get(l) for s in spectra])) for l in keys})
