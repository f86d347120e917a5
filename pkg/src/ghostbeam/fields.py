"""Complex field grids, the swift-electron source field and the angular
decomposition of the generated SPP into truncated plane-wave strips."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import constants as C
from scipy import special

from .errors import PreconditionError, SamplingError
from .scene import SlabScene

FIELD_MAGIC = "GHOSTBEAM-FIELD"
FIELD_VERSION = 1

ELECTRON_REST_KEV = C.m_e * C.c**2 / C.e / 1e3


@dataclass
class ComplexField2D:
    """Complex scalar amplitude sampled as ``values[iy, ix]``.

    Sample ``(iy, ix)`` sits at ``(origin[0] + ix*dx, origin[1] + iy*dy)``.
    """

    values: np.ndarray
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise ValueError("field must be 2D with at least 2 samples per axis")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("grid spacing must be positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def x_axis(self) -> np.ndarray:
        return self.origin[0] + np.arange(self.nx) * self.dx

    @property
    def y_axis(self) -> np.ndarray:
        return self.origin[1] + np.arange(self.ny) * self.dy

    def power(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.dx * self.dy)

    @property
    def normalized(self) -> bool:
        return abs(self.power() - 1.0) <= 1e-9

    def normalize(self) -> "ComplexField2D":
        p = self.power()
        if not np.isfinite(p) or p <= 0:
            raise PreconditionError("cannot normalize a zero or non-finite field")
        return ComplexField2D(self.values / math.sqrt(p), self.dx, self.dy, self.origin)

    def column_index(self, x: float) -> int:
        i = int(round((x - self.origin[0]) / self.dx))
        if not 0 <= i < self.nx:
            raise ValueError(f"x={x} outside field")
        return i

    def column(self, x: float) -> np.ndarray:
        return self.values[:, self.column_index(x)]

    def save(self, path) -> None:
        header = (f"{FIELD_MAGIC}\nversion {FIELD_VERSION}\nnx {self.nx}\nny {self.ny}\n"
                  f"dx {self.dx!r}\ndy {self.dy!r}\n"
                  f"origin_x {self.origin[0]!r}\norigin_y {self.origin[1]!r}\nend\n")
        payload = np.empty((self.ny, self.nx, 2), dtype="<f4")
        payload[..., 0] = self.values.real
        payload[..., 1] = self.values.imag
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(payload.tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "ComplexField2D":
        raw = Path(path).read_bytes()
        meta = {}
        pos = 0
        first = True
        while True:
            end = raw.index(b"\n", pos)
            line = raw[pos:end].decode("ascii")
            pos = end + 1
            if first:
                if line != FIELD_MAGIC:
                    raise ValueError(f"{path}: not a field dump")
                first = False
                continue
            if line == "end":
                break
            key, value = line.split(" ", 1)
            meta[key] = value
        if int(meta["version"]) != FIELD_VERSION:
            raise ValueError(f"unsupported field version {meta['version']}")
        nx, ny = int(meta["nx"]), int(meta["ny"])
        data = np.frombuffer(raw, dtype="<f4", offset=pos, count=2 * nx * ny).reshape(ny, nx, 2)
        values = data[..., 0].astype(np.float64) + 1j * data[..., 1].astype(np.float64)
        return cls(values, float(meta["dx"]), float(meta["dy"]),
                   (float(meta["origin_x"]), float(meta["origin_y"])))


@dataclass(frozen=True)
class SourceParams:
    """Swift-electron source parameters.

    ``electron_energy_eps`` in keV, ``omega`` in rad/s, ``s`` in nm and
    ``energy_window`` in meV. ``v`` (fraction of c) and ``gamma`` are
    derived from the kinetic energy. ``field_scale`` stands in for the
    charge/medium prefactor of the source field, which only sets the
    overall amplitude.
    """

    electron_energy_eps: float
    omega: float
    s: float
    energy_window: float = 100.0
    field_scale: float = 1.0

    @classmethod
    def from_photon_energy(cls, energy_kev: float, hbar_omega_ev: float, s: float,
                           **kw) -> "SourceParams":
        return cls(energy_kev, hbar_omega_ev * C.e / C.hbar, s, **kw)

    @property
    def gamma(self) -> float:
        return 1.0 + self.electron_energy_eps / ELECTRON_REST_KEV

    @property
    def v(self) -> float:
        return math.sqrt(1.0 - 1.0 / self.gamma**2)

    @property
    def v_si(self) -> float:
        return self.v * C.c

    @property
    def hbar_omega_ev(self) -> float:
        return C.hbar * self.omega / C.e

    @property
    def s0_nm(self) -> float:
        return self.v_si * self.gamma / self.omega * 1e9

    @property
    def electron_wavelength_nm(self) -> float:
        p = self.gamma * C.m_e * self.v_si
        return C.h / p * 1e9

    def validate(self) -> list[str]:
        out = []
        if self.electron_energy_eps <= 0:
            out.append("electron energy must be positive")
        if self.omega <= 0:
            out.append("omega must be positive")
        if not self.s > 0:
            out.append("waist s must be positive")
        elif self.electron_energy_eps > 0 and self.omega > 0 and self.s < self.s0_nm:
            out.append("s < s_0")
        if self.energy_window > self.hbar_omega_ev * 1e3:
            out.append("energy_window exceeds hbar*omega")
        return out


def swift_electron_field(rho, params: SourceParams) -> np.ndarray:
    """Field of a swift electron at radial distance ``rho`` (nm).

    Returns an array of shape ``(2,) + shape(rho)`` holding the ``z`` and
    ``rho`` components. The overall prefactor is ``field_scale * 2 omega /
    (v^2 gamma)`` in SI units.

    Raises
    ------
    ValueError
        If any ``rho <= 0``.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("rho must be positive")
    g = params.gamma
    x = rho / params.s0_nm
    # exponentially scaled Bessel functions keep large arguments finite
    decay = np.exp(-x)
    k0 = special.k0e(x) * decay
    k1 = special.k1e(x) * decay
    pref = params.field_scale * 2.0 * params.omega / (params.v_si**2 * g)
    return np.stack([pref * (1j / g) * k0, -pref * k1 + 0j])


@dataclass(frozen=True)
class PlaneWaveComponent:
    """One term of the angular decomposition of the SPP source.

    ``center`` is the envelope centre and ``s`` the strip waist (nm).
    """

    k: tuple[float, float]
    a_k: complex
    energy_loss: float
    center: tuple[float, float] = (0.0, 0.0)
    s: float = math.inf
    theta: float = 0.0

    @property
    def electron_recoil(self) -> tuple[float, float]:
        return (-self.k[0], -self.k[1])

    @property
    def direction(self) -> tuple[float, float]:
        kk = math.hypot(*self.k)
        return (self.k[0] / kk, self.k[1] / kk)


def component_angles(n_components: int) -> np.ndarray:
    """Uniform angles ``m*pi/n`` about +x, symmetric, inside (-pi/2, pi/2)."""
    if n_components < 3 or n_components % 2 == 0:
        raise ValueError("n_components must be odd and >= 3")
    half = n_components // 2
    return np.arange(-half, half + 1) * (math.pi / n_components)


def angular_weight(theta, k: float, s: float) -> np.ndarray:
    """Unnormalized |a| of a Gaussian source of waist ``s`` at angle ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if math.isinf(s):
        return (theta == 0).astype(float)
    return np.exp(-((k * s * np.sin(theta)) ** 2) / 4.0)


def decompose_source(scene: SlabScene, params: SourceParams, n_components: int = 33,
                     offsets=None) -> list[PlaneWaveComponent]:
    """Split the SPP launched at the injection point into plane-wave strips.

    Parameters
    ----------
    scene : SlabScene
    params : SourceParams
        ``params.s`` is the source waist that sets the angular spread.
    n_components : int
        Odd number of directions, uniform in angle about +x.
    offsets : sequence of float, optional
        Per-component displacement of the envelope centre along the
        direction transverse to k (nm). Defaults to zero.

    Returns
    -------
    list of PlaneWaveComponent
        Weights satisfy ``sum |a_k|^2 = 1``.
    """
    if params.s < params.s0_nm:
        raise PreconditionError(f"source waist s={params.s} nm below s_0={params.s0_nm:.1f} nm")
    theta = component_angles(n_components)
    k = scene.k_spp
    w = angular_weight(theta, k, params.s)
    w = w / math.sqrt(np.sum(w**2))
    if offsets is None:
        offsets = np.zeros_like(theta)
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != theta.shape:
        raise ValueError("offsets must have one entry per component")
    cx, cy = scene.injection_center
    out = []
    for t, a, off in zip(theta, w, offsets):
        ct, st = math.cos(t), math.sin(t)
        out.append(PlaneWaveComponent(
            k=(k * ct, k * st), a_k=complex(a), energy_loss=params.hbar_omega_ev,
            center=(cx - st * off, cy + ct * off), s=params.s, theta=float(t)))
    return out


def strip_profile(comp: PlaneWaveComponent, x, y) -> np.ndarray:
    """Unit-amplitude strip S(rho)*exp(i k.(rho - c)) on broadcast ``x``, ``y``.

    The envelope is Gaussian across the propagation direction and decays
    behind the centre, so the strip starts at the injection region.
    """
    ux, uy = comp.direction
    rx = np.asarray(x, dtype=float) - comp.center[0]
    ry = np.asarray(y, dtype=float) - comp.center[1]
    along = ux * rx + uy * ry
    across = -uy * rx + ux * ry
    if math.isinf(comp.s):
        env = np.ones(np.broadcast(along, across).shape)
    else:
        env = np.exp(-(across / comp.s) ** 2)
        env = env * np.where(along < 0, np.exp(-(along / comp.s) ** 2), 1.0)
    return env * np.exp(1j * (comp.k[0] * rx + comp.k[1] * ry))


def render_line(comp: PlaneWaveComponent, scene: SlabScene, x: float) -> np.ndarray:
    """Component strip on the scene y-grid at ``x``, L2-normalized along y.

    A strip that misses the line entirely is returned as zeros.
    """
    y = scene.y_grid
    line = strip_profile(comp, x, y)
    norm = math.sqrt(np.sum(np.abs(line) ** 2) * scene.step)
    if norm < 1e-150:
        return np.zeros_like(line)
    return line / norm


def render_component(comp: PlaneWaveComponent, scene: SlabScene) -> ComplexField2D:
    """Render a component over the whole slab with total power ``|a_k|^2``."""
    step = scene.step
    if step > scene.lambda_spp / 4:
        raise SamplingError(f"grid step {step} nm coarser than lambda/4")
    x = scene.x_grid
    y = scene.y_grid
    vals = strip_profile(comp, x[None, :], y[:, None])
    p = np.sum(np.abs(vals) ** 2) * step * step
    vals = vals * (comp.a_k / math.sqrt(p)) if p > 0 else vals * 0
    return ComplexField2D(vals, step, step, (float(x[0]), float(y[0])))
