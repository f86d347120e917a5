"""Angular-spectrum propagation of scalar SPP fields along +x.

Each field line is a function of ``y``; it is advanced by a distance ``D``
by multiplying its spectrum with ``exp(i k_x D)``, where
``k_x = sqrt(k^2 - k_y^2)``. Beyond the propagating band the complex root
turns this into exponential decay.

Two boundary treatments exist. ``periodic`` is the bare FFT and is
exactly unitary on the propagating band. ``apodized`` tapers the outer 5%
of the line, zero-pads it to twice its length and runs the propagation in
short substeps with an absorbing layer in the padding, so energy leaving
the window is removed instead of wrapping around.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal.windows import tukey

from . import _accel
from .errors import GeometryError, SamplingError, SamplingWarning
from .fields import ComplexField2D
from .scene import SlabScene

TAPER_FRACTION = 0.05
ALIAS_BAND = 0.9  # top 10% of the sampled band
ALIAS_LIMIT = 0.01
ABSORBER_STRENGTH = 60.0  # peak absorption coefficient times pad width


@dataclass(frozen=True)
class Propagator:
    lambda_spp: float
    distance_D: float
    include_evanescent: bool = True
    boundary: str = "apodized"

    def __post_init__(self):
        if self.boundary not in ("apodized", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.lambda_spp <= 0:
            raise ValueError("lambda_spp must be positive")

    @property
    def k(self) -> float:
        return 2.0 * math.pi / self.lambda_spp

    def transfer(self, ky, distance: float | None = None) -> np.ndarray:
        """Spectral transfer factor at transverse wavenumbers ``ky``."""
        d = self.distance_D if distance is None else distance
        ky = np.asarray(ky, dtype=float)
        kx = np.sqrt((self.k**2 - ky**2).astype(complex))
        h = np.exp(1j * kx * d)
        if not self.include_evanescent:
            h = np.where(np.abs(ky) <= self.k, h, 0.0)
        return h


def check_sampling(lines: np.ndarray, dy: float, lambda_spp: float, strict: bool = False) -> float:
    """Return the fraction of power in the top 10% of the sampled band.

    Warns (or raises in strict mode) when that fraction exceeds 1% or when
    ``dy`` is coarser than a quarter wavelength.
    """
    if dy > lambda_spp / 4 * (1 + 1e-12):
        raise SamplingError(f"dy={dy} nm coarser than lambda/4")
    spec = np.abs(np.fft.fft(lines, axis=0)) ** 2
    if spec.ndim > 1:
        spec = spec.sum(axis=1)
    total = spec.sum()
    if total == 0:
        return 0.0
    ky = np.abs(np.fft.fftfreq(spec.shape[0], dy)) * 2 * math.pi
    frac = float(spec[ky > ALIAS_BAND * math.pi / dy].sum() / total)
    if frac > ALIAS_LIMIT:
        msg = f"{100 * frac:.1f}% of power near the sampling limit; refine the grid"
        if strict:
            raise SamplingError(msg)
        warnings.warn(msg, SamplingWarning, stacklevel=3)
    return frac


class LineStepper:
    """Advance a stack of lines (shape ``(ny, m)``) in successive steps.

    Keeps the padded state between steps, so stepping column by column
    costs one FFT pair per step and applies the edge taper only once.
    """

    def __init__(self, lines, dy: float, lambda_spp: float, boundary: str = "apodized",
                 include_evanescent: bool = True):
        lines = np.asarray(lines, dtype=np.complex128)
        self._squeeze = lines.ndim == 1
        if self._squeeze:
            lines = lines[:, None]
        self.n = lines.shape[0]
        self.dy = dy
        self.prop = Propagator(lambda_spp, 0.0, include_evanescent, boundary)
        if boundary == "periodic":
            self.pad = 0
            self.state = lines.copy()
        else:
            self.pad = self.n // 2
            taper = tukey(self.n, 2 * TAPER_FRACTION)
            self.state = np.zeros((self.n + 2 * self.pad, lines.shape[1]), dtype=np.complex128)
            self.state[self.pad:self.pad + self.n] = lines * taper[:, None]
            depth = np.zeros(self.state.shape[0])
            idx = np.arange(self.state.shape[0])
            depth[: self.pad] = (self.pad - idx[: self.pad]) / self.pad
            depth[self.pad + self.n:] = (idx[self.pad + self.n:] - (self.pad + self.n - 1)) / self.pad
            self._sigma = ABSORBER_STRENGTH / (self.pad * dy) * depth**2
        self.ky = 2 * math.pi * np.fft.fftfreq(self.state.shape[0], dy)
        self._cache: dict[float, tuple[np.ndarray, np.ndarray | None]] = {}

    @property
    def max_substep(self) -> float:
        return 2.0 * self.prop.lambda_spp

    def _factors(self, sub: float):
        if sub not in self._cache:
            h = self.prop.transfer(self.ky, sub)
            mask = None if self.pad == 0 else np.exp(-self._sigma * sub)
            self._cache[sub] = (h, mask)
        return self._cache[sub]

    def step(self, distance: float) -> None:
        if distance < 0:
            raise ValueError("negative distance; use a time-reversed field instead")
        if distance == 0:
            return
        n_sub = 1 if self.pad == 0 else max(1, math.ceil(distance / self.max_substep - 1e-12))
        h, mask = self._factors(distance / n_sub)
        for _ in range(n_sub):
            self.state = np.fft.ifft(np.fft.fft(self.state, axis=0) * h[:, None], axis=0)
            if mask is not None:
                self.state *= mask[:, None]

    def multiply(self, factor) -> None:
        """Pointwise product with a line defined on the unpadded grid."""
        factor = np.asarray(factor, dtype=np.complex128)
        if factor.shape[0] != self.n:
            raise ValueError("factor does not match the line length")
        if self.pad:
            factor = np.pad(factor, self.pad, mode="edge")
        self.state *= factor[:, None]

    def lines(self) -> np.ndarray:
        out = self.state[self.pad:self.pad + self.n].copy()
        return out[:, 0] if self._squeeze else out


def propagate_lines(lines, dy: float, prop: Propagator, strict: bool = False,
                    check: bool = True) -> np.ndarray:
    """Advance one line (``(ny,)``) or a stack of lines (``(ny, m)``) by ``prop.distance_D``."""
    if prop.distance_D < 0:
        raise ValueError("negative distance; use a time-reversed field instead")
    lines = np.asarray(lines, dtype=np.complex128)
    if prop.distance_D == 0:
        return lines.copy()
    if check:
        check_sampling(lines, dy, prop.lambda_spp, strict)
    stepper = LineStepper(lines, dy, prop.lambda_spp, prop.boundary, prop.include_evanescent)
    stepper.step(prop.distance_D)
    return stepper.lines()


def propagate(field: ComplexField2D, prop: Propagator, strict: bool = False) -> ComplexField2D:
    """Advance every column of ``field`` by ``prop.distance_D`` along +x.

    The output grid is the input grid shifted by ``D`` in x.
    """
    out = propagate_lines(field.values, field.dy, prop, strict)
    return ComplexField2D(out, field.dx, field.dy,
                          (field.origin[0] + prop.distance_D, field.origin[1]))


def apply_transfer(field, T):
    """Multiply a field (or line stack) by ``T(y)`` along the y axis."""
    T = np.asarray(T, dtype=np.complex128)
    if isinstance(field, ComplexField2D):
        if T.shape != (field.ny,):
            raise ValueError("transfer function does not match the field y-grid")
        return ComplexField2D(field.values * T[:, None], field.dx, field.dy, field.origin)
    values = np.asarray(field, dtype=np.complex128)
    if values.shape[0] != T.shape[0]:
        raise ValueError("transfer function does not match the line length")
    return values * (T if values.ndim == 1 else T[:, None])


def time_reverse(line):
    """Time reversal of a monochromatic scalar field is complex conjugation."""
    return np.conj(line)


def point_source_line(y_grid, y_p: float, k: float) -> np.ndarray:
    """Band-limited point source at ``y_p``: all propagating k_y, equal weight."""
    y = np.asarray(y_grid, dtype=float)
    n = y.size
    dy = y[1] - y[0]
    ky = 2 * math.pi * np.fft.fftfreq(n, dy)
    spec = np.where(np.abs(ky) <= k, np.exp(-1j * ky * (y_p - y[0])), 0.0)
    return np.fft.ifft(spec) / dy


def _line_normalize(line: np.ndarray, dy: float) -> np.ndarray:
    norm = math.sqrt(float(np.sum(np.abs(line) ** 2)) * dy)
    return line / norm if norm > 0 else line


def _check_bucket(scene: SlabScene, bucket_point) -> None:
    if not scene.in_bucket(bucket_point):
        raise GeometryError(f"bucket point {tuple(bucket_point)} outside the bucket extent")


def bucket_green_line(scene: SlabScene, bucket_point, strict: bool = False) -> np.ndarray:
    """Outgoing field of a point source at the bucket point, on the object line.

    Normalized along the line, object not applied.
    """
    _check_bucket(scene, bucket_point)
    src = point_source_line(scene.y_grid, bucket_point[1], scene.k_spp)
    prop = Propagator(scene.lambda_spp, bucket_point[0] - scene.object_x, boundary=scene.boundary)
    return _line_normalize(propagate_lines(src, scene.step, prop, strict), scene.step)


def reverse_line(scene: SlabScene, bucket_point, T=None, strict: bool = False) -> np.ndarray:
    """E_rev on the object line: the time-reversed detection mode times T(y)."""
    g = bucket_green_line(scene, bucket_point, strict)
    if T is None:
        T = scene.transfer()
    return apply_transfer(g, T)


def time_reversed_field(bucket_point, scene: SlabScene, strict: bool = False) -> ComplexField2D:
    """E_rev over the whole slab for a detection at ``bucket_point``.

    Columns between the object line and the bucket carry the backward wave
    from the point; the object is applied at the object line and the wave
    continues towards the injection side. Columns beyond the bucket are
    zero.
    """
    _check_bucket(scene, bucket_point)
    x = scene.x_grid
    y = scene.y_grid
    dy = scene.step
    T = scene.transfer()
    src = point_source_line(y, bucket_point[1], scene.k_spp)
    check_sampling(src, dy, scene.lambda_spp, strict)
    out = np.zeros((y.size, x.size), dtype=np.complex128)
    stepper = LineStepper(src, dy, scene.lambda_spp, scene.boundary)
    start = int(np.searchsorted(x, bucket_point[0] + 1e-9 * dy) - 1)
    if start < 0:
        return ComplexField2D(out, scene.step, dy, (float(x[0]), float(y[0])))
    stepper.step(bucket_point[0] - x[start])
    i_obj = int(round((scene.object_x - x[0]) / scene.step))
    norm = None
    for i in range(start, -1, -1):
        if i < start:
            stepper.step(x[i + 1] - x[i])
        if i == i_obj:
            g = stepper.lines()
            norm = math.sqrt(float(np.sum(np.abs(g) ** 2)) * dy)
            stepper.multiply(T)
        out[:, i] = stepper.lines()
    if norm:
        out /= norm
    return ComplexField2D(out, scene.step, dy, (float(x[0]), float(y[0])))


def local_wavevector(line, dy: float, k: float, direction: int = +1):
    """Local wavevector ``Im(grad E / E)`` of a line field.

    ``direction`` is +1 for a field travelling towards +x and -1 for one
    travelling towards -x; the x derivative follows from the propagator.
    Returns ``(kx, ky)`` arrays.
    """
    line = np.asarray(line, dtype=np.complex128)
    ky = 2 * math.pi * np.fft.fftfreq(line.size, dy)
    spec = np.fft.fft(line)
    kx = np.sqrt((k**2 - ky**2).astype(complex))
    dy_e = np.fft.ifft(1j * ky * spec)
    dx_e = direction * np.fft.ifft(1j * kx * spec)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.imag(dx_e / line), np.imag(dy_e / line)


def direct_sum_propagate(src_y, src_vals, obs_y, distance: float, lambda_spp: float) -> np.ndarray:
    """O(N^2) Rayleigh-Sommerfeld summation from one line to a parallel one."""
    src_y = np.asarray(src_y, dtype=float)
    dy = float(src_y[1] - src_y[0])
    return _accel.huygens_sum(src_y, src_vals, obs_y, distance, 2 * math.pi / lambda_spp, dy)
