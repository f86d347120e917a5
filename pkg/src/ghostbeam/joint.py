"""Joint electron/SPP state, post-selection on a bucket detection and the
resulting gated and ungated electron images."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, PreconditionError, RegimeWarning
from .fields import ComplexField2D, PlaneWaveComponent, SourceParams, decompose_source, render_line
from .propagation import Propagator, apply_transfer, point_source_line, propagate_lines
from .scene import SlabScene, require_valid

DARK_FLOOR = 1e-12
DOMINANCE_THRESHOLD = 0.05
NORM_TOL = 1e-9


@dataclass
class JointState:
    """The SPP/electron superposition restricted to the object line.

    ``lines[j]`` is component j's forward field on the object line,
    normalized along y (all zeros if the strip misses the line).
    """

    components: list[PlaneWaveComponent]
    scene: SlabScene
    params: SourceParams
    a: np.ndarray
    lines: np.ndarray
    strict: bool = False

    @property
    def omega(self) -> float:
        return self.params.omega

    @property
    def recoils(self) -> np.ndarray:
        return np.array([c.electron_recoil for c in self.components], dtype=float)

    @property
    def transfer(self) -> np.ndarray:
        return self.scene.transfer()


def build_joint_state(scene: SlabScene, params: SourceParams, n_components: int = 33,
                      offsets=None, strict: bool = False) -> JointState:
    require_valid(scene, params)
    comps = decompose_source(scene, params, n_components, offsets)
    lines = np.array([render_line(c, scene, scene.object_x) for c in comps])
    a = np.array([c.a_k for c in comps], dtype=np.complex128)
    return JointState(comps, scene, params, a, lines, strict)


def _line_of(f, line_x, dy):
    if isinstance(f, ComplexField2D):
        return f.column(line_x), f.dy, f.y_axis
    if dy is None:
        raise ValueError("dy is required for raw line input")
    return np.asarray(f, dtype=np.complex128), dy, None


def superposition_integral(E_fwd, E_rev, line_x: float = 0.0, dy: float | None = None) -> complex:
    """Overlap ``c = sum E_fwd * E_rev dy`` along the line ``x = line_x``.

    Accepts two ``ComplexField2D`` on the same grid or two 1D lines with
    ``dy``. ``E_rev`` already carries the time-reversal conjugation. Each
    input must have line norm at most 1, so that ``|c| <= 1``.
    """
    f, dy_f, yf = _line_of(E_fwd, line_x, dy)
    r, dy_r, yr = _line_of(E_rev, line_x, dy)
    if f.shape != r.shape or abs(dy_f - dy_r) > 1e-12 * dy_f:
        raise ValueError("fields are not on the same grid")
    if yf is not None and yr is not None and not np.allclose(yf, yr, rtol=0, atol=1e-9 * dy_f):
        raise ValueError("fields are not on the same grid")
    for name, line in (("E_fwd", f), ("E_rev", r)):
        if np.sum(np.abs(line) ** 2) * dy_f > 1.0 + NORM_TOL:
            raise PreconditionError(f"{name} is not normalized along the line")
    return complex(np.sum(f * r) * dy_f)


def _check_points(scene: SlabScene, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    for p in pts:
        if not scene.in_bucket((p[0], p[1])):
            raise GeometryError(f"bucket point {tuple(p)} outside the bucket extent")
    return pts


def reverse_lines(state: JointState, points) -> np.ndarray:
    """E_rev on the object line for each bucket point, as columns ``(ny, m)``."""
    scene = state.scene
    pts = _check_points(scene, points)
    y = scene.y_grid
    out = np.empty((y.size, len(pts)), dtype=np.complex128)
    # group by bucket x so each distance is propagated once
    for bx in np.unique(pts[:, 0]):
        sel = np.flatnonzero(pts[:, 0] == bx)
        src = np.stack([point_source_line(y, pts[i, 1], scene.k_spp) for i in sel], axis=1)
        prop = Propagator(scene.lambda_spp, bx - scene.object_x, boundary=scene.boundary)
        g = propagate_lines(src, scene.step, prop, state.strict)
        g /= np.sqrt(np.sum(np.abs(g) ** 2, axis=0) * scene.step)
        out[:, sel] = g
    return apply_transfer(out, state.transfer)


def couplings(state: JointState, points) -> np.ndarray:
    """Superposition integrals ``c[j, m]`` of component j with bucket point m."""
    rev = reverse_lines(state, points)
    return state.lines @ rev * state.scene.step


@dataclass
class PostselectedElectron:
    """Pure electron state left after a photon is detected at ``detection_point``.

    ``weights[j] = a_j c_j`` multiplies the recoiled plane wave with
    transverse wavevector ``recoils[j]``; the relative phase between terms
    is carried by the weights. An empty weight vector is a dark detection.
    """

    recoils: np.ndarray
    weights: np.ndarray
    detection_point: tuple[float, float]
    defocus: float = 0.0
    axis: np.ndarray = field(default_factory=lambda: np.zeros(0))
    envelope_center: float = 0.0
    envelope_waist: float = math.inf
    electron_wavelength: float = 0.0
    dominant: tuple[int, int] | None = None
    dominance_ratio: float = 0.0

    @property
    def amplitudes(self) -> list[tuple[tuple[float, float], complex]]:
        return [((float(k[0]), float(k[1])), complex(w)) for k, w in zip(self.recoils, self.weights)]

    @property
    def is_dark(self) -> bool:
        return self.weights.size == 0

    @property
    def probability(self) -> float:
        return float(np.sum(np.abs(self.weights) ** 2))

    @property
    def phi(self) -> float:
        """Relative phase of the dominant pair (higher recoil k_y vs lower)."""
        if self.dominant is None:
            return 0.0
        i, j = self.dominant
        return float(np.angle(self.weights[j] * np.conj(self.weights[i])))


def _dominant_pair(weights: np.ndarray, recoils: np.ndarray):
    mag = np.abs(weights)
    if mag.size < 2:
        return None, 0.0
    order = np.argsort(-mag, kind="stable")
    i, j = order[0], order[1]
    if recoils[i, 1] > recoils[j, 1]:
        i, j = j, i
    low = min(mag[i], mag[j])
    rest = mag[order[2:]]
    ratio = float(rest.max() / low) if rest.size and low > 0 else (0.0 if low > 0 else math.inf)
    return (int(i), int(j)), ratio


def _make_post(state: JointState, c: np.ndarray, point, defocus: float) -> PostselectedElectron:
    scene = state.scene
    common = dict(detection_point=(float(point[0]), float(point[1])), defocus=defocus,
                  axis=scene.y_grid.copy(), envelope_center=scene.injection_center[1],
                  envelope_waist=scene.injection_waist_s,
                  electron_wavelength=state.params.electron_wavelength_nm)
    if np.all(np.abs(c) < DARK_FLOOR):
        return PostselectedElectron(np.zeros((0, 2)), np.zeros(0, dtype=complex), **common)
    w = state.a * c
    rec = state.recoils
    pair, ratio = _dominant_pair(w, rec)
    return PostselectedElectron(rec, w, dominant=pair, dominance_ratio=ratio, **common)


def postselect(state: JointState, bucket_point, defocus: float = 0.0) -> PostselectedElectron:
    """Project the joint state on a photon detection at ``bucket_point``."""
    c = couplings(state, [bucket_point])[:, 0]
    return _make_post(state, c, bucket_point, defocus)


def postselect_many(state: JointState, bucket_points, defocus: float = 0.0):
    c = couplings(state, bucket_points)
    return [_make_post(state, c[:, m], p, defocus) for m, p in enumerate(bucket_points)]


def has_two_dominant(post: PostselectedElectron, threshold: float = DOMINANCE_THRESHOLD) -> bool:
    return post.dominant is not None and post.dominance_ratio < threshold


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

@dataclass
class ImageProfile:
    axis: np.ndarray
    intensity: np.ndarray
    gated: bool
    visibility: float
    envelope: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, path, axis_name: str = "y_nm") -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# gated={str(self.gated).lower()}\n")
            fh.write(f"# visibility={self.visibility:.12g}\n")
            for key in sorted(self.meta):
                fh.write(f"# {key}={self.meta[key]}\n")
            fh.write(f"{axis_name},intensity\n")
            for a, v in zip(self.axis, self.intensity):
                fh.write(f"{a:.10g},{v:.10g}\n")

    @classmethod
    def from_csv(cls, path) -> "ImageProfile":
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key] = val
                elif line and not line[0].isalpha():
                    rows.append([float(v) for v in line.split(",")])
        data = np.array(rows, dtype=float).reshape(-1, 2)
        gated = meta.pop("gated", "false") == "true"
        vis = float(meta.pop("visibility", "nan"))
        return cls(data[:, 0], data[:, 1], gated, vis, meta=meta)


def fringe_visibility(intensity, envelope=None, rel_floor: float = math.exp(-2)) -> float:
    """Fringe contrast ``(max - min) / (max + min)``.

    With an ``envelope`` the ratio ``intensity / envelope`` is used over the
    region where the envelope exceeds ``rel_floor`` of its peak, which
    removes the slowly varying illumination from the measurement.
    """
    intensity = np.asarray(intensity, dtype=float)
    if envelope is None:
        r = intensity
    else:
        envelope = np.asarray(envelope, dtype=float)
        if envelope.max() <= 0:
            return 0.0
        reg = envelope >= rel_floor * envelope.max()
        r = intensity[reg] / envelope[reg]
    hi, lo = r.max(), r.min()
    if hi + lo <= 0:
        return 0.0
    return float(min(1.0, max(0.0, (hi - lo) / (hi + lo))))


def _fresnel(psi: np.ndarray, dy: float, wavelength: float, defocus: float) -> np.ndarray:
    if defocus == 0:
        return psi
    n = psi.shape[-1]
    pad = n // 2
    g = np.zeros(psi.shape[:-1] + (n + 2 * pad,), dtype=np.complex128)
    g[..., pad:pad + n] = psi
    q = np.fft.fftfreq(g.shape[-1], dy)
    h = np.exp(-1j * math.pi * wavelength * defocus * q**2)
    return np.fft.ifft(np.fft.fft(g, axis=-1) * h, axis=-1)[..., pad:pad + n]


def _component_waves(post: PostselectedElectron, defocus: float) -> np.ndarray:
    y = post.axis
    env = np.exp(-(((y - post.envelope_center) / post.envelope_waist) ** 2))
    waves = env[None, :] * np.exp(1j * post.recoils[:, 1][:, None] * (y - post.envelope_center)[None, :])
    dy = y[1] - y[0]
    return _fresnel(waves, dy, post.electron_wavelength, defocus)


def _far_field(waves: np.ndarray, dy: float):
    n = waves.shape[-1]
    m = 4 * n
    spec = np.fft.fftshift(np.fft.fft(waves, n=m, axis=-1), axes=-1) * dy
    q = np.fft.fftshift(np.fft.fftfreq(m, dy)) * 2 * math.pi
    return q, spec


def electron_image(post: PostselectedElectron, defocus: float | None = None,
                   far_field: bool = False) -> ImageProfile:
    """Coherent image ``|sum_j w_j psi_j|^2`` of a post-selected electron.

    Each ``psi_j`` is the illuminating envelope tilted by the recoil
    wavevector. ``defocus`` (nm) applies a Fresnel transfer at the
    electron wavelength; ``far_field`` returns the diffraction pattern on a
    recoil-wavevector axis (nm^-1) instead.
    """
    defocus = post.defocus if defocus is None else defocus
    axis = post.axis
    meta = {"defocus_nm": defocus, "detection_y_nm": post.detection_point[1],
            "detection_x_nm": post.detection_point[0]}
    if post.is_dark:
        return ImageProfile(axis.copy(), np.zeros(axis.size), True, 0.0, np.zeros(axis.size),
                            meta | {"dark": True})
    waves = _component_waves(post, defocus)
    if far_field:
        axis, waves = _far_field(waves, post.axis[1] - post.axis[0])
    coherent = np.abs(post.weights @ waves) ** 2
    incoherent = np.abs(post.weights) ** 2 @ (np.abs(waves) ** 2)
    vis = 0.0 if far_field else fringe_visibility(coherent, incoherent)
    meta["probability"] = post.probability
    meta["phi_rad"] = post.phi
    return ImageProfile(axis, coherent, True, vis, incoherent, meta)


def _state_waves(state: JointState, defocus: float) -> np.ndarray:
    proxy = PostselectedElectron(state.recoils, state.a, (0.0, 0.0), defocus,
                                 state.scene.y_grid, state.scene.injection_center[1],
                                 state.scene.injection_waist_s,
                                 state.params.electron_wavelength_nm)
    return _component_waves(proxy, defocus)


def transmitted_fraction(state: JointState) -> np.ndarray:
    """Fraction of each component's SPP power passed by the object."""
    return np.sum(np.abs(state.lines * state.transfer[None, :]) ** 2, axis=1) * state.scene.step


def ungated_image(state: JointState, defocus: float = 0.0, transmitted: bool = False) -> ImageProfile:
    """Image with no coincidence gate: intensities of all recoils add.

    With ``transmitted`` each recoil is further weighted by the fraction of
    its SPP that passes the object, so only electrons whose SPP went on
    towards the bucket contribute.
    """
    waves = _state_waves(state, defocus)
    p = np.abs(state.a) ** 2
    if transmitted:
        p = p * transmitted_fraction(state)
    inten = p @ (np.abs(waves) ** 2)
    # reference: the untilted illumination through the same defocus
    scene = state.scene
    y = scene.y_grid
    illum = np.exp(-(((y - scene.injection_center[1]) / scene.injection_waist_s) ** 2))
    envelope = np.abs(_fresnel(illum.astype(complex), scene.step,
                               state.params.electron_wavelength_nm, defocus)) ** 2
    envelope *= np.sum(p)
    vis = fringe_visibility(inten, envelope)
    return ImageProfile(y.copy(), inten, False, vis, envelope,
                        {"defocus_nm": defocus, "transmitted_only": transmitted})


def marginal_gated_image(state: JointState, bucket_points, defocus: float = 0.0) -> ImageProfile:
    """Sum of the unnormalized gated images over ``bucket_points``.

    Each gated image already carries its detection probability.
    """
    posts = postselect_many(state, bucket_points, defocus)
    total = np.zeros(state.scene.y_grid.size)
    for post in posts:
        if not post.is_dark:
            total += electron_image(post, defocus).intensity
    return ImageProfile(state.scene.y_grid.copy(), total, False, fringe_visibility(total),
                        meta={"n_bucket_points": len(posts), "defocus_nm": defocus})


def detected_image(state: JointState, bucket_points, defocus: float = 0.0) -> ImageProfile:
    """Ungated image restricted to electrons whose SPP reached the bucket.

    Built from forward propagation only: each component is pushed through
    the object to the bucket line, and the detected fraction enters as the
    overlap matrix of the component fields over the bucket points.
    """
    scene = state.scene
    pts = _check_points(scene, bucket_points)
    y = scene.y_grid
    gram = np.zeros((len(state.components),) * 2, dtype=np.complex128)
    for bx in np.unique(pts[:, 0]):
        sel = pts[pts[:, 0] == bx]
        prop = Propagator(scene.lambda_spp, bx - scene.object_x, boundary=scene.boundary)
        # the binary object itself has broadband edges; no sampling check here
        fwd = propagate_lines(apply_transfer(state.lines.T, state.transfer), scene.step,
                              prop, check=False)
        # line norm of the outgoing point-source field, which fixes the
        # scale of the detection mode at each bucket point
        idx = np.array([int(round((p[1] - y[0]) / scene.step)) for p in sel])
        src = np.stack([point_source_line(y, p[1], scene.k_spp) for p in sel], axis=1)
        g = propagate_lines(src, scene.step, prop, state.strict)
        norm2 = np.sum(np.abs(g) ** 2, axis=0) * scene.step
        f = fwd[idx] / np.sqrt(norm2)[:, None]
        gram += f.T @ f.conj()
    waves = _state_waves(state, defocus)
    aw = state.a[:, None] * waves
    inten = np.real(np.einsum("jk,jy,ky->y", gram, aw, aw.conj()))
    return ImageProfile(y.copy(), inten, False, fringe_visibility(inten),
                        meta={"n_bucket_points": len(pts), "defocus_nm": defocus})


def ghost_scan(state: JointState, bucket_points) -> ImageProfile:
    """Total coincidence probability ``sum_j |a_j c_j|^2`` per bucket point."""
    pts = _check_points(state.scene, bucket_points)
    c = couplings(state, pts)
    prob = np.abs(state.a[:, None] * c) ** 2
    total = prob.sum(axis=0)
    return ImageProfile(pts[:, 1].copy(), total, True, fringe_visibility(total),
                        meta={"bucket_x_nm": float(pts[0, 0])})


def fringe_period(profile: ImageProfile, rel_floor: float = math.exp(-2)) -> float:
    """Fringe period from the spacing of minima of ``intensity / envelope``.

    Minima are located to sub-sample precision by parabolic interpolation.
    """
    env = profile.envelope if profile.envelope is not None else np.ones_like(profile.intensity)
    reg = np.flatnonzero(env >= rel_floor * env.max())
    r = profile.intensity[reg] / env[reg]
    ax = profile.axis[reg]
    step = ax[1] - ax[0]
    mins = []
    for i in range(1, r.size - 1):
        if r[i] < r[i - 1] and r[i] <= r[i + 1]:
            den = r[i - 1] - 2 * r[i] + r[i + 1]
            off = 0.5 * (r[i - 1] - r[i + 1]) / den if den > 0 else 0.0
            mins.append(ax[i] + off * step)
    if len(mins) < 2:
        raise ValueError("fewer than two fringe minima in the measurement region")
    return float(np.median(np.diff(mins)))


# ---------------------------------------------------------------------------
# near-field resolution
# ---------------------------------------------------------------------------

def modulation_transfer(distance: float, q, lambda_spp: float, n: int = 4096,
                        modulation: float = 0.5) -> np.ndarray:
    """Coincidence modulation carried by object frequencies ``q`` across a gap.

    A source line at ``distance`` from a grating ``T = 1 + m cos(q y)``
    (scaled to be passive) launches every transverse wavevector equally.
    The wave with ``k_y = q`` reaches the grating attenuated by the gap
    propagator and is folded back onto ``k_y = 0`` by the grating, where
    the bucket collects it. The signal is normalized to the direct
    ``k_y = 0`` path and to ``m / 2``, so an unattenuated frequency gives 1.
    """
    dy = min(lambda_spp / 8.0, distance / 6.0)
    y = np.arange(n) * dy
    L = n * dy
    q = np.asarray(q, dtype=float)
    # snap to frequencies that are periodic on the line
    q = np.round(q * L / (2 * math.pi)) * 2 * math.pi / L
    prop = Propagator(lambda_spp, distance, boundary="periodic")
    waves = np.exp(1j * np.outer(y, np.concatenate([[0.0], q])))
    arrived = propagate_lines(waves, dy, prop)
    T = (1 + modulation * np.cos(np.outer(y, np.concatenate([[0.0], q])))) / (1 + modulation)
    T[:, 0] = 1.0 / (1 + modulation)
    # projection onto the uniform bucket mode
    c = np.abs(np.mean(arrived * T, axis=0))
    return c[1:] / c[0] / (modulation / 2)


def resolution_sweep(distances, lambda_spp: float, n: int = 4096, modulation: float = 0.5,
                     n_q: int = 600) -> list[tuple[float, float]]:
    """Object frequency ``k_y*`` where the modulation falls to 1/e, per gap D.

    Returns ``[(D, k_y*), ...]`` in input order.
    """
    k = 2 * math.pi / lambda_spp
    out = []
    for D in distances:
        D = float(D)
        if D <= 0:
            raise ValueError("distance must be positive")
        if D >= lambda_spp:
            warnings.warn(f"D={D} nm is not below lambda_spp; far-field resolution applies",
                          RegimeWarning, stacklevel=2)
        dy = min(lambda_spp / 8.0, D / 6.0)
        q_hi = min(math.pi / dy * 0.9, 20 * max(k, 1.0 / D))
        q = np.unique(np.geomspace(0.05 * k, q_hi, n_q))
        L = n * dy
        q = np.unique(np.round(q * L / (2 * math.pi))) * 2 * math.pi / L
        q = q[q > 0]
        m = modulation_transfer(D, q, lambda_spp, n, modulation)
        ref = m[0]
        target = ref / math.e
        below = np.flatnonzero(m < target)
        if below.size == 0:
            raise ValueError(f"modulation never falls to 1/e for D={D}")
        i = below[0]
        if i == 0:
            k_star = q[0]
        else:
            la, lb = math.log(m[i - 1]), math.log(m[i])
            t = (la - math.log(target)) / (la - lb)
            k_star = q[i - 1] + t * (q[i] - q[i - 1])
        out.append((D, float(k_star)))
    return out


def forward_field(state: JointState) -> ComplexField2D:
    """Coherent forward SPP over the slab, for display.

    Upstream of the object the weighted strips are summed; the summed line
    at the object is multiplied by T(y) and propagated column by column
    towards the bucket.
    """
    from .fields import strip_profile
    from .propagation import LineStepper

    scene = state.scene
    x, y = scene.x_grid, scene.y_grid
    out = np.zeros((y.size, x.size), dtype=np.complex128)
    up = np.flatnonzero(x <= scene.object_x)
    for comp in state.components:
        if comp.a_k != 0:
            out[:, up] += comp.a_k * strip_profile(comp, x[None, up], y[:, None])
    line = sum(comp.a_k * strip_profile(comp, scene.object_x, y) for comp in state.components)
    stepper = LineStepper(apply_transfer(line, state.transfer), scene.step, scene.lambda_spp,
                          scene.boundary)
    pos = scene.object_x
    for i in np.flatnonzero(x > scene.object_x):
        stepper.step(x[i] - pos)
        pos = x[i]
        out[:, i] = stepper.lines()
    return ComplexField2D(out, scene.step, scene.step, (float(x[0]), float(y[0])))
