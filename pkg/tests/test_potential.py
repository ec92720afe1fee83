import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughguide import constants as C
from roughguide import potential as P
from roughguide import roughness as R

SMOOTH = P.TrapConfig()
DC = SMOOTH.with_modulation(omega_m=0.0)


@pytest.fixture(scope="module")
def rough30():
    cfg = P.TrapConfig(roughness=R.spectral_realization(0))
    return P.calibrate_dc_roughness(cfg, 30e-9)


def test_only_ioffe_field():
    cfg = P.TrapConfig(modulation=P.ModulationSpec(0.0, 0.0, 0.0),
                       h_wire=P.HWireSpec(current=0.0, model="full"))
    V = P.instantaneous_potential(cfg, [3e-6, 9e-6, 1e-4])
    assert V == pytest.approx(C.MU_B * 1.8e-4, rel=1e-14)
    assert P.averaged_potential_eq1(cfg.with_modulation(omega_m=1.0), [0, 7e-6, 0]) == \
        pytest.approx(C.MU_B * 1.8e-4, rel=1e-14)


def test_modulation_zero_crossing():
    r = np.array([[0.3e-6, 7.2e-6, 50e-6]])
    t = 0.25 * SMOOTH.modulation.period  # cos = 0
    S, _ = P.trap_model(SMOOTH).split(r)
    assert P.instantaneous_potential(SMOOTH, r, t)[0] == pytest.approx(
        C.MU_B * np.linalg.norm(S[0]), rel=1e-12)


def test_dc_period_is_mode_error():
    with pytest.raises(P.ModeError):
        DC.modulation.period
    with pytest.raises(P.ModeError):
        P.averaged_potential_numeric(DC, [0, 7e-6, 0])
    with pytest.raises(P.ModeError):
        P.longitudinal_profile(DC, kind="ac-averaged")


def test_out_of_window(rough30):
    with pytest.raises(P.OutOfWindowError):
        P.instantaneous_potential(rough30, [0, 7e-6, 0.9e-3])


def test_quadrature_converged(rough30):
    r = np.array([[0.2e-6, 7.1e-6, z] for z in np.linspace(-2e-4, 2e-4, 7)])
    a = P.averaged_potential_numeric(rough30, r, nodes=64)
    b = P.averaged_potential_numeric(rough30, r, nodes=128)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


@settings(max_examples=15)
@given(st.floats(-1e-6, 1e-6), st.floats(-1e-6, 1e-6), st.floats(-4e-4, 4e-4))
def test_eq1_against_numeric_average(dx, dy, z):
    cfg = P.TrapConfig(roughness=R.calibrate_to_energy_rms(R.spectral_realization(0), 80e-9))
    xy, _, _ = P.transverse_minimum(cfg, [z], averaged=True)
    r = np.array([[xy[0, 0] + dx, xy[0, 1] + dy, z]])
    num = P.averaged_potential_numeric(cfg, r)[0]
    eq1 = P.averaged_potential_eq1(cfg, r)[0]
    S, M = P.trap_model(cfg).split(r)
    Bz0 = cfg.B_z0
    perp = np.linalg.norm(S[0, :2]) + np.linalg.norm(M[0, :2])
    rms = np.sqrt(np.mean((cfg.modulation.I_c * cfg.roughness.dBz) ** 2))
    assert abs(eq1 / num - 1) <= (perp / Bz0) ** 2 + (rms / Bz0) ** 2


def _rough_parts(rms_K):
    real = R.calibrate_to_energy_rms(R.spectral_realization(0), rms_K)
    cfg = P.TrapConfig(roughness=real)
    z = np.linspace(-3e-4, 3e-4, 200)
    line = np.column_stack([np.zeros_like(z), np.full_like(z, 7e-6), z])
    ac = P.averaged_potential_numeric(cfg, line) - P.averaged_potential_numeric(SMOOTH, line)
    dc = (P.instantaneous_potential(cfg.with_modulation(omega_m=0.0), line)
          - P.instantaneous_potential(DC, line))
    return ac, dc


def test_rough_term_averages_out():
    ac, dc = _rough_parts(10e-9)
    assert np.std(ac) < 1e-4 * np.std(dc)
    # what survives the average is second order in the rough field
    ac2, dc2 = _rough_parts(20e-9)
    assert np.std(dc2) == pytest.approx(2 * np.std(dc), rel=1e-6)
    assert np.std(ac2) == pytest.approx(4 * np.std(ac), rel=0.02)


def test_sqrt2_rule():
    w_dc = P.transverse_frequencies(DC, 0.0, averaged=False)
    w_ac = P.transverse_frequencies(SMOOTH, 0.0, averaged=True)
    np.testing.assert_allclose(w_dc / w_ac, np.sqrt(2), rtol=0.01)
    assert 1.5e3 < w_dc.mean() / (2 * np.pi) < 3e3


def test_longitudinal_frequencies():
    dc = P.harmonic_fit(P.longitudinal_profile(DC))
    ac = P.harmonic_fit(P.longitudinal_profile(SMOOTH), window=dc.window)
    assert dc.omega / (2 * np.pi) == pytest.approx(7.1, abs=0.01)
    assert ac.omega / (2 * np.pi) == pytest.approx(11.3, abs=0.2)
    # smooth DC profile on the guide line is an exact parabola for the harmonic H model
    assert dc.rms_residual / C.K_B < 1e-12
    assert ac.rms_residual / C.K_B < 1e-9


def test_full_h_model_close_to_harmonic():
    cfg = P.TrapConfig(h_wire=P.HWireSpec(model="full")).with_modulation(omega_m=0.0)
    f = P.harmonic_fit(P.longitudinal_profile(cfg)).omega / (2 * np.pi)
    assert f == pytest.approx(7.1, rel=0.02)


def test_eq1_profile_shift_formula():
    prof = P.longitudinal_profile(SMOOTH, kind="ac-eq1")
    fit = P.harmonic_fit(prof)
    m = P.trap_model(SMOOTH)
    pred = P.predicted_omega_z_ac(2 * np.pi * 7.1, m.B_H_prime, SMOOTH.B_z0 + m.B_c)
    assert fit.omega == pytest.approx(pred, rel=0.02)


def test_polarity_inversion(rough30):
    a = P.harmonic_fit(P.longitudinal_profile(rough30.with_modulation(omega_m=0.0, sign=1)))
    b = P.harmonic_fit(P.longitudinal_profile(rough30.with_modulation(omega_m=0.0, sign=-1)),
                       window=a.window)
    assert np.max(np.abs(a.residual_profile + b.residual_profile)) <= 1e-10 * np.max(
        np.abs(a.residual_profile))


def test_calibration_and_suppression(rough30):
    dc = P.harmonic_fit(P.longitudinal_profile(rough30.with_modulation(omega_m=0.0)))
    ac = P.harmonic_fit(P.longitudinal_profile(rough30), window=dc.window)
    assert P.residual_rms_kelvin(dc) == pytest.approx(30e-9, rel=1e-9)
    assert P.residual_rms_kelvin(ac) < 1e-9
    assert ac.rms_residual < dc.rms_residual / 50


def test_calibration_at_80nK():
    cfg = P.calibrate_dc_roughness(P.TrapConfig(roughness=R.spectral_realization(2)), 80e-9)
    dc = P.harmonic_fit(P.longitudinal_profile(cfg.with_modulation(omega_m=0.0)))
    assert P.residual_rms_kelvin(dc) == pytest.approx(80e-9, abs=0.5e-9)


def test_weak_ioffe_field_warns():
    real = R.calibrate_to_energy_rms(R.spectral_realization(0), 80e-9)
    with pytest.warns(RuntimeWarning):
        P.TrapConfig(roughness=real.scaled(1e4))


# -- harmonic fit ----------------------------------------------------------
def _parabola(omega, z0, off, n=801, dz=0.5e-6):
    z = (np.arange(n) - n // 2) * dz
    return P.PotentialProfile(z, off + 0.5 * C.M_RB87 * omega**2 * (z - z0) ** 2, "dc")


@given(st.floats(2 * np.pi * 2, 2 * np.pi * 40), st.floats(-20e-6, 20e-6),
       st.floats(-1e-29, 1e-29))
def test_exact_parabola(omega, z0, off):
    prof = _parabola(omega, z0, off)
    fit = P.harmonic_fit(prof, window=150e-6)
    assert fit.omega == pytest.approx(omega, rel=1e-9)
    assert fit.center == pytest.approx(z0, abs=1e-12)
    assert fit.rms_residual < 1e-12 * np.ptp(prof.V)


@given(st.floats(2 * np.pi * 2, 2 * np.pi * 40), st.integers(0, 2**32))
def test_refit_of_residual_is_flat(omega, seed):
    rng = np.random.default_rng(seed)
    prof = _parabola(omega, 0.0, 0.0)
    V = prof.V + 1e-31 * rng.standard_normal(len(prof.V))
    fit = P.harmonic_fit(P.PotentialProfile(prof.z_grid, V, "dc"), window=150e-6)
    again = P.harmonic_fit(P.PotentialProfile(fit.z, fit.residual_profile, "dc"),
                           window=(fit.z[0], fit.z[-1]))
    # the residual carries no curvature left to fit
    assert again.omega < 1e-6 * omega
    np.testing.assert_allclose(again.residual_profile, fit.residual_profile,
                               atol=1e-9 * np.max(np.abs(fit.residual_profile)))


def test_parabola_plus_sinusoid():
    prof = _parabola(2 * np.pi * 7.1, 0.0, 0.0)
    amp = 30e-9 * C.K_B
    V = prof.V + amp * np.sin(2 * np.pi * prof.z_grid / 20e-6)
    fit = P.harmonic_fit(P.PotentialProfile(prof.z_grid, V, "dc"), window=(-190e-6, 190e-6))
    assert fit.rms_residual * np.sqrt(2) == pytest.approx(amp, rel=0.01)


def test_fit_window_errors():
    prof = _parabola(2 * np.pi * 7.1, 0.0, 0.0, n=101)
    with pytest.raises(P.OutOfWindowError):
        P.harmonic_fit(prof, window=1e-3)
    with pytest.raises(P.IllConditionedFitError):
        P.harmonic_fit(prof, window=(0.0, 2e-6))


def test_profile_save_load(tmp_path):
    prof = P.longitudinal_profile(DC)
    back = P.PotentialProfile.load(prof.save(tmp_path / "p.txt"))
    np.testing.assert_allclose(back.V, prof.V, rtol=1e-14)
    np.testing.assert_allclose(back.z_grid, prof.z_grid, rtol=1e-14)


# -- closed forms ------------------------------------------------------------
def test_predicted_omega_z_ac():
    w = P.predicted_omega_z_ac(2 * np.pi * 7.1, 0.094649, 1.8e-4 + 8.693e-6)
    assert w / (2 * np.pi) == pytest.approx(11.3, abs=0.1)
    assert P.predicted_omega_z_ac(5.0, 0.0, 1e-4) == 5.0
    assert P.predicted_omega_z_ac(5.0, 0.1, 1e6) == pytest.approx(5.0, rel=1e-6)
    with pytest.raises(ValueError):
        P.predicted_omega_z_ac(5.0, 0.1, 0.0)


def test_larmor_and_adiabaticity():
    ratio, fL = P.adiabaticity_ratio(2 * np.pi * 30e3, 1.8e-4)
    assert fL == pytest.approx(1.26e6, rel=0.01)
    assert ratio == pytest.approx(0.024, rel=0.02)
    assert P.adiabaticity_ratio(0.0, 1.8e-4)[0] == 0.0


def _sinusoid_realization(rms_K, lam, I=13e-3):
    z = (np.arange(4001) - 2000) * 0.5e-6
    amp = np.sqrt(2) * rms_K * C.K_B / (C.MU_B * I)
    zeros = np.zeros_like(z)
    return R.RoughRealization(z, amp * np.sin(2 * np.pi * z / lam), zeros, zeros)


def test_micromotion_estimate():
    real = _sinusoid_realization(80e-9, 60e-6)
    cfg = P.TrapConfig(roughness=real)
    est = P.micromotion_roughness_estimate(cfg)
    assert 0 < est / (80e-9 * C.K_B) < 1e-6
    double = cfg.with_modulation(omega_m=2 * cfg.modulation.omega_m)
    assert P.micromotion_roughness_estimate(double) == pytest.approx(est / 4, rel=1e-12)
    assert P.micromotion_roughness_estimate(SMOOTH) == 0.0
    with pytest.raises(P.ModeError):
        P.micromotion_roughness_estimate(DC)


def test_transverse_defects():
    cfg = P.calibrate_dc_roughness(P.TrapConfig(roughness=R.spectral_realization(0)), 80e-9)
    meander, mod = P.transverse_defect_estimates(cfg)
    assert 1e-9 <= meander <= 100e-9
    assert 1e-3 <= mod <= 1e-2
    twice = P.transverse_defect_estimates(cfg.with_roughness(cfg.roughness.scaled(2)))
    assert twice[0] == pytest.approx(2 * meander, rel=1e-12)
    flat = cfg.with_roughness(R.RoughRealization(cfg.roughness.z_grid, cfg.roughness.dBz,
                                                 0 * cfg.roughness.dBx, 0 * cfg.roughness.dBy))
    assert P.transverse_defect_estimates(flat) == (0.0, 0.0)
    with pytest.raises(P.MissingTransverseDataError):
        P.transverse_defect_estimates(SMOOTH)
