import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from ghostbeam import ComplexField2D, PreconditionError, SamplingError, SourceParams, fig1_scene
from ghostbeam.fields import (angular_weight, component_angles, decompose_source, render_component,
                              render_line, swift_electron_field)


def bessel_k_quad(nu, x):
    # K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt
    # the integrand is below 1e-300 once x cosh t > 700
    upper = math.acosh(700.0 / x + 1.0)
    return integrate.quad(lambda t: math.exp(-x * math.cosh(t)) * math.cosh(nu * t), 0, upper,
                          epsabs=1e-15, epsrel=1e-12, limit=200)[0]


def _pref(p):
    return 2.0 * p.omega / (p.v_si**2 * p.gamma)


def test_field_at_s0_matches_quadrature(params):
    ez, er = swift_electron_field(params.s0_nm, params)
    pref = _pref(params)
    k0 = (ez / (1j * pref / params.gamma)).real
    k1 = (-er / pref).real
    assert k0 == pytest.approx(bessel_k_quad(0, 1.0), rel=1e-9)
    assert k1 == pytest.approx(bessel_k_quad(1, 1.0), rel=1e-9)
    assert k0 == pytest.approx(0.42102443824070834, rel=1e-12)
    assert k1 == pytest.approx(0.6019072301972346, rel=1e-12)


def test_field_decays_past_s0(params):
    near = np.abs(swift_electron_field(params.s0_nm, params))
    far = np.abs(swift_electron_field(10 * params.s0_nm, params))
    assert np.all(far < near * math.exp(-8))


def test_component_ratio(params):
    rho = np.geomspace(0.1, 10, 7) * params.s0_nm
    ez, er = swift_electron_field(rho, params)
    x = rho / params.s0_nm
    expected = -1j / params.gamma * np.array([bessel_k_quad(0, v) / bessel_k_quad(1, v) for v in x])
    np.testing.assert_allclose(ez / er, expected, rtol=1e-8)


def test_nonpositive_rho_raises(params):
    with pytest.raises(ValueError):
        swift_electron_field([1.0, 0.0], params)
    with pytest.raises(ValueError):
        swift_electron_field(-1.0, params)


def test_large_rho_is_finite(params):
    f = swift_electron_field(1e6 * params.s0_nm, params)
    assert np.all(np.isfinite(f))
    assert np.all(np.abs(f) == 0)


def test_magnitude_monotone(params):
    rho = np.geomspace(0.01, 100, 400) * params.s0_nm
    mag = np.abs(swift_electron_field(rho, params))
    assert np.all(np.diff(mag[0]) < 0)
    assert np.all(np.diff(mag[1]) < 0)


def test_source_params_consistency(params):
    assert params.v == pytest.approx(math.sqrt(1 - params.gamma**-2), rel=1e-12)
    assert params.hbar_omega_ev == pytest.approx(2.0, rel=1e-12)
    assert params.s0_nm == pytest.approx(95.45, abs=0.05)
    assert params.validate() == []
    assert "energy_window exceeds hbar*omega" in SourceParams.from_photon_energy(
        200.0, 0.05, 200.0).validate()


def test_weights_normalized_and_symmetric(scene, params):
    comps = decompose_source(scene, params)
    a = np.array([c.a_k for c in comps])
    assert np.sum(np.abs(a) ** 2) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(a, a[::-1], rtol=0, atol=1e-12)
    for c in comps:
        assert c.electron_recoil == (-c.k[0], -c.k[1])
        assert c.energy_loss == params.hbar_omega_ev


def test_infinite_waist_is_single_plane_wave(scene):
    p = SourceParams.from_photon_energy(200.0, 2.0, math.inf)
    a = np.array([c.a_k for c in decompose_source(scene, p)])
    assert np.abs(a[len(a) // 2]) == pytest.approx(1.0)
    assert np.count_nonzero(a) == 1


def test_preconditions(scene, params):
    with pytest.raises(PreconditionError):
        decompose_source(scene, SourceParams.from_photon_energy(200.0, 2.0, 50.0))
    with pytest.raises(ValueError):
        decompose_source(scene, params, n_components=32)


def test_angular_fwhm_against_dense_dft():
    lam = 600.0
    k = 2 * math.pi / lam
    s = 2 * lam
    # reference: |FT|^2 of a Gaussian line source exp(-y^2/s^2), dense DFT
    dy = s / 50
    y = np.arange(-20 * s, 20 * s, dy)
    n = 1 << 20
    spec = np.abs(np.fft.fftshift(np.fft.fft(np.exp(-((y / s) ** 2)), n))) ** 2
    ky = np.fft.fftshift(np.fft.fftfreq(n, dy)) * 2 * math.pi
    half = ky[spec >= 0.5 * spec.max()]
    theta_ref = 2 * math.asin(half.max() / k)
    # decomposition: Gaussian fit of |a|^2 against sin(theta)
    theta = component_angles(33)
    w2 = angular_weight(theta, k, s) ** 2
    keep = w2 > 1e-6 * w2.max()
    slope = np.polyfit(np.sin(theta[keep]) ** 2, np.log(w2[keep]), 1)[0]
    theta_fit = 2 * math.asin(math.sqrt(math.log(2) / -slope))
    assert theta_fit == pytest.approx(theta_ref, rel=0.05)


def test_render_phase_and_envelope(scene, params):
    comps = decompose_source(scene, params)
    c = comps[len(comps) // 2]
    f = render_component(c, scene)
    iy = int(np.argmin(np.abs(f.y_axis - scene.injection_center[1])))
    row = f.values[iy]
    per = int(round(scene.lambda_spp / scene.step))
    ix = np.flatnonzero(f.x_axis >= scene.injection_center[0])[:-per]
    dphi = np.angle(row[ix + per] / row[ix])
    assert np.max(np.abs(dphi)) < 1e-9
    ixc = int(np.argmin(np.abs(f.x_axis - scene.injection_center[0])))
    assert abs(f.values[iy, ixc]) == pytest.approx(np.abs(f.values).max(), rel=1e-12)


def test_render_power_equals_weight(scene, params):
    for c in decompose_source(scene, params)[10:14]:
        assert render_component(c, scene).power() == pytest.approx(abs(c.a_k) ** 2, rel=1e-12)


def test_coarse_grid_rejected(params):
    sc = fig1_scene(grid_step=200.0)
    c = decompose_source(sc, params)[16]
    with pytest.raises(SamplingError):
        render_component(c, sc)


def test_render_line_normalized(scene, params):
    c = decompose_source(scene, params)[14]
    line = render_line(c, scene, scene.object_x)
    assert np.sum(np.abs(line) ** 2) * scene.step == pytest.approx(1.0, rel=1e-12)


def test_field_file_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    v = rng.normal(size=(7, 5)) + 1j * rng.normal(size=(7, 5))
    f = ComplexField2D(v, 2.5, 1.5, (10.0, -4.0))
    path = tmp_path / "f.gbf"
    f.save(path)
    assert path.read_bytes().startswith(b"GHOSTBEAM-FIELD\n")
    g = ComplexField2D.load(path)
    assert (g.dx, g.dy, g.origin) == (f.dx, f.dy, f.origin)
    np.testing.assert_allclose(g.values, v, rtol=1e-6, atol=1e-6)


def test_normalize(scene):
    f = ComplexField2D(np.ones((4, 4), complex), 2.0, 2.0, (0.0, 0.0))
    assert not f.normalized
    g = f.normalize()
    assert g.normalized
    assert g.power() == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(96.0, 5000.0), st.integers(1, 20))
def test_weights_sum_to_one(s, half):
    sc = fig1_scene()
    p = SourceParams.from_photon_energy(200.0, 2.0, s)
    a = np.array([c.a_k for c in decompose_source(sc, p, 2 * half + 1)])
    assert np.sum(np.abs(a) ** 2) == pytest.approx(1.0, abs=1e-12)
