"""Slab geometry, object transfer functions and scene validation.

Coordinates are in nm. ``x`` is the main SPP propagation direction
(injection -> object -> bucket) and ``y`` the transverse direction in
which the ghost image is formed. The slab spans ``0 <= x <= width_x`` and
``-width_y/2 <= y <= width_y/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np

from .errors import GeometryError

Point = tuple[float, float]


@dataclass(frozen=True)
class DoubleSlit:
    d: float  # centre-to-centre separation
    b: float  # slit width
    center_y: float = 0.0


@dataclass(frozen=True)
class SingleSlit:
    b: float
    center_y: float = 0.0


@dataclass(frozen=True)
class TransmissionProfile:
    """Complex T(y) sampled on its own (uniform or not) y axis."""

    y: np.ndarray = field(compare=False)
    values: np.ndarray = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        if self.y.shape != self.values.shape or self.y.ndim != 1:
            raise ValueError("y and values must be 1D arrays of equal length")

    @classmethod
    def constant(cls, value: complex, half_width: float = 1e9) -> "TransmissionProfile":
        return cls(np.array([-half_width, half_width]), np.array([value, value]))


@dataclass(frozen=True)
class RingResonator:
    n_rings: int
    spacing: float
    center: Point


ObjectSpec = Union[DoubleSlit, SingleSlit, TransmissionProfile, RingResonator]


@dataclass(frozen=True)
class SlabScene:
    width_x: float
    width_y: float
    lambda_spp: float
    injection_center: Point
    injection_waist_s: float
    object_x: float
    bucket_center: Point
    bucket_extent_dy: float
    object: ObjectSpec
    grid_step: float | None = None
    boundary: str = "apodized"

    @property
    def step(self) -> float:
        return self.grid_step if self.grid_step is not None else self.lambda_spp / 8.0

    @property
    def k_spp(self) -> float:
        return 2.0 * math.pi / self.lambda_spp

    @cached_property
    def x_grid(self) -> np.ndarray:
        n = int(math.ceil(self.width_x / self.step - 1e-9)) + 1
        return np.arange(n) * self.step

    @cached_property
    def y_grid(self) -> np.ndarray:
        # odd and symmetric about y = 0
        m = int(math.ceil(self.width_y / (2.0 * self.step) - 1e-9))
        return np.arange(-m, m + 1) * self.step

    @property
    def shape(self) -> tuple[int, int]:
        return self.y_grid.size, self.x_grid.size

    @property
    def bucket_bounds(self) -> tuple[float, float]:
        yc = self.bucket_center[1]
        return yc - self.bucket_extent_dy / 2.0, yc + self.bucket_extent_dy / 2.0

    def in_bucket(self, point: Point, tol: float = 1e-9) -> bool:
        lo, hi = self.bucket_bounds
        return (abs(point[0] - self.bucket_center[0]) <= tol * max(1.0, self.width_x)
                and lo - tol <= point[1] <= hi + tol)

    def bucket_points(self) -> list[Point]:
        """Every grid sample of the bucket line inside the extent."""
        lo, hi = self.bucket_bounds
        ys = self.y_grid[(self.y_grid >= lo - 1e-9) & (self.y_grid <= hi + 1e-9)]
        return [(self.bucket_center[0], float(y)) for y in ys]

    def transfer(self) -> np.ndarray:
        return build_transfer(self.object, self.y_grid)


def _check_uniform(y_grid: np.ndarray) -> float:
    y_grid = np.asarray(y_grid, dtype=float)
    if y_grid.ndim != 1 or y_grid.size < 2:
        raise ValueError("y_grid must be a 1D axis with at least two samples")
    steps = np.diff(y_grid)
    if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ValueError("y_grid must be uniform and increasing")
    return float(steps[0])


def _rect(y: np.ndarray, center: float, width: float) -> np.ndarray:
    return (np.abs(y - center) <= width / 2.0 * (1.0 + 1e-12)).astype(complex)


def build_transfer(obj: ObjectSpec, y_grid) -> np.ndarray:
    """Sample the complex transfer function T(y) of ``obj`` on ``y_grid``."""
    y = np.asarray(y_grid, dtype=float)
    _check_uniform(y)
    lo, hi = y[0], y[-1]
    if isinstance(obj, DoubleSlit):
        edges = (obj.center_y - obj.d / 2 - obj.b / 2, obj.center_y + obj.d / 2 + obj.b / 2)
        if edges[0] < lo or edges[1] > hi:
            raise GeometryError("double slit extends beyond the y grid")
        return (_rect(y, obj.center_y + obj.d / 2, obj.b)
                + _rect(y, obj.center_y - obj.d / 2, obj.b))
    if isinstance(obj, SingleSlit):
        if obj.center_y - obj.b / 2 < lo or obj.center_y + obj.b / 2 > hi:
            raise GeometryError("slit extends beyond the y grid")
        return _rect(y, obj.center_y, obj.b)
    if isinstance(obj, TransmissionProfile):
        return (np.interp(y, obj.y, obj.values.real)
                + 1j * np.interp(y, obj.y, obj.values.imag))
    if isinstance(obj, RingResonator):
        raise GeometryError("a ring resonator has no line transfer function")
    raise TypeError(f"unknown object spec {type(obj).__name__}")


def validate_scene(scene: SlabScene, params=None) -> list[str]:
    """Return the list of violated scene invariants (empty when valid)."""
    out = []
    if scene.lambda_spp <= 0:
        out.append("lambda_spp must be positive")
    if scene.width_x <= 0 or scene.width_y <= 0:
        out.append("slab extent must be positive")
    if not (scene.injection_center[0] < scene.object_x < scene.bucket_center[0]):
        out.append("ordering violated: need injection.x < object_x < bucket.x")
    if scene.bucket_extent_dy <= 0:
        out.append("bucket_extent_dy must be positive")
    lo, hi = scene.bucket_bounds
    half = scene.width_y / 2
    if not (0 <= scene.bucket_center[0] <= scene.width_x and -half <= lo and hi <= half):
        out.append("bucket outside slab")
    if not (0 <= scene.injection_center[0] <= scene.width_x
            and -half <= scene.injection_center[1] <= half):
        out.append("injection centre outside slab")
    if scene.injection_waist_s <= 0:
        out.append("injection_waist_s must be positive")
    if params is not None and scene.injection_waist_s < params.s0_nm:
        out.append("injection_waist_s < s_0")
    if scene.boundary not in ("apodized", "periodic"):
        out.append("boundary must be 'apodized' or 'periodic'")

    obj = scene.object
    if isinstance(obj, DoubleSlit):
        if not (obj.d > obj.b > 0):
            out.append("double slit requires d > b > 0")
        elif (obj.center_y - obj.d / 2 - obj.b / 2 < -half
              or obj.center_y + obj.d / 2 + obj.b / 2 > half):
            out.append("slits outside slab")
    elif isinstance(obj, SingleSlit):
        if obj.b <= 0:
            out.append("slit width must be positive")
        elif abs(obj.center_y) + obj.b / 2 > half:
            out.append("slits outside slab")
    elif isinstance(obj, TransmissionProfile):
        if np.any(np.abs(obj.values) > 1 + 1e-12):
            out.append("|T| > 1: object is not passive")
    elif isinstance(obj, RingResonator):
        if obj.n_rings < 1:
            out.append("ring resonator needs at least one ring")
        if abs(obj.spacing - scene.lambda_spp) > 1e-9 * scene.lambda_spp:
            out.append("ring spacing ≠ λ_SPP")
    return out


def require_valid(scene: SlabScene, params=None) -> None:
    problems = validate_scene(scene, params)
    if problems:
        raise GeometryError("; ".join(problems))


# Default desk-scale scene. The slits sit on the +-2nd direction of the
# default 33-component angular decomposition as seen from the injection
# point, 5 um downstream; the bucket is 10 um beyond the slits.
DEFAULT_COMPONENTS = 33
DEFAULT_SLIT_SEPARATION = 2 * 5000.0 * math.tan(2 * math.pi / DEFAULT_COMPONENTS)


def fig1_scene(**overrides) -> SlabScene:
    values = dict(
        width_x=20000.0,
        width_y=10000.0,
        lambda_spp=600.0,
        injection_center=(2000.0, 0.0),
        injection_waist_s=2500.0,
        object_x=7000.0,
        bucket_center=(17000.0, 0.0),
        bucket_extent_dy=2000.0,
        object=DoubleSlit(d=DEFAULT_SLIT_SEPARATION, b=200.0),
    )
    values.update(overrides)
    return SlabScene(**values)


def ring_scene(n_rings: int = 5, lambda_spp: float = 600.0, **overrides) -> SlabScene:
    size = 2.0 * (n_rings + 1) * lambda_spp
    values = dict(
        width_x=size,
        width_y=size,
        lambda_spp=lambda_spp,
        injection_center=(0.25 * size, 0.0),
        injection_waist_s=lambda_spp,
        object_x=0.5 * size,
        bucket_center=(0.75 * size, 0.0),
        bucket_extent_dy=lambda_spp,
        object=RingResonator(n_rings=n_rings, spacing=lambda_spp, center=(0.5 * size, 0.0)),
    )
    values.update(overrides)
    return SlabScene(**values)
