import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import curve_fit

from roughguide import constants as C
from roughguide import dynamics as D
from roughguide import potential as P

OMEGA = 2 * np.pi * 7.1
Z = np.arange(-400, 401) * 1e-6


def harmonic(omega=OMEGA, z=Z):
    return P.PotentialProfile(z, 0.5 * C.M_RB87 * omega**2 * z**2, "dc")


@pytest.mark.parametrize("kw", [{"N": 0}, {"temperature": 0.0}, {"dim": 2}])
def test_ensemble_spec_validation(kw):
    with pytest.raises(ValueError):
        D.EnsembleSpec(**kw)


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        D.IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError):
        D.IntegratorConfig(scheme="euler")
    with pytest.raises(D.TimeStepError):
        D.IntegratorConfig(dt=5e-3).check_resolves(2 * np.pi / OMEGA)


def test_thermal_sampling_moments():
    ens = D.sample_thermal_ensemble(D.EnsembleSpec(N=20_000, Z1=20e-6, seed=3), harmonic())
    kT = C.K_B * 280e-9
    assert np.mean(ens.position) == pytest.approx(20e-6, abs=4 * np.sqrt(kT / (C.M_RB87 * OMEGA**2) / 2e4))
    assert np.var(ens.position) == pytest.approx(kT / (C.M_RB87 * OMEGA**2), rel=0.04)
    assert np.var(ens.velocity) == pytest.approx(kT / C.M_RB87, rel=0.04)


def test_sampling_prefix_stable():
    a = D.sample_thermal_ensemble(D.EnsembleSpec(N=200, seed=8), harmonic())
    b = D.sample_thermal_ensemble(D.EnsembleSpec(N=50, seed=8), harmonic())
    assert np.array_equal(a.position[:50], b.position)
    assert np.array_equal(a.velocity[:50], b.velocity)


def test_rejection_efficiency_guard():
    z = np.arange(-5000, 5001) * 1e-6
    with pytest.raises(D.RejectionEfficiencyError):
        D.sample_thermal_ensemble(D.EnsembleSpec(N=10, temperature=1e-12), harmonic(z=z))


def test_verlet_matches_analytic_harmonic_motion():
    ens = D.Ensemble(np.array([20e-6, -5e-6]), np.array([0.0, 1e-3]))
    icfg = D.IntegratorConfig(dt=2e-5, t_max=2.0, sample_interval=1e-2)
    tr = D.integrate_static_1d(ens, harmonic(), icfg)
    x = ens.position[None] * np.cos(OMEGA * tr.t[:, None]) + \
        ens.velocity[None] / OMEGA * np.sin(OMEGA * tr.t[:, None])
    # verlet phase error ~ (omega dt)^2 omega t / 24
    assert np.max(np.abs(tr.positions - x)) < 1e-3 * 20e-6
    assert np.all(tr.max_energy_drift < 1e-5)


def test_leaving_grid_raises():
    ens = D.Ensemble(np.array([0.0]), np.array([1.0]))
    with pytest.raises(D.DomainError):
        D.integrate_static_1d(ens, harmonic(), D.IntegratorConfig(t_max=0.1))


@settings(max_examples=6)
@given(st.integers(1, 16), st.integers(0, 2**40))
def test_worker_count_does_not_change_results(workers, seed):
    spec = D.EnsembleSpec(N=37, seed=seed)
    icfg = D.IntegratorConfig(t_max=0.2)
    wide = harmonic(z=np.arange(-1500, 1501) * 1e-6)
    ref = D.integrate_static_1d(D.sample_thermal_ensemble(spec, harmonic()), wide, icfg)
    out = D.integrate_static_1d(D.sample_thermal_ensemble(spec, harmonic()), wide, icfg,
                                workers=workers)
    assert np.array_equal(ref.positions, out.positions)
    assert np.array_equal(ref.cm, out.cm)


# -- fitting -----------------------------------------------------------------
def _signal(t, Z0, Z1, tau, w, phi):
    return Z0 + Z1 * np.exp(-(t / tau) ** 2) * np.cos(w * t + phi)


@settings(max_examples=20)
@given(st.floats(0.3, 1.5), st.floats(2 * np.pi * 5, 2 * np.pi * 12), st.floats(-3, 3),
       st.integers(0, 2**32))
def test_damped_fit_recovers_parameters(tau, w, phi, seed):
    assume(tau * w / (2 * np.pi) >= 2)  # at least two periods before the envelope dies
    t = np.arange(0, 2.0, 1e-3)
    y = _signal(t, 1e-6, 15e-6, tau, w, phi)
    y += 0.2e-6 * np.random.default_rng(seed).standard_normal(len(t))
    fit = D.fit_damped_oscillation(t, y, sigma=0.2e-6)
    assert fit.tau == pytest.approx(tau, rel=0.05)
    assert fit.omega == pytest.approx(w, rel=0.01)
    assert fit.Z1 == pytest.approx(15e-6, rel=0.05)
    assert 0.7 < fit.chi2_reduced < 1.3


def test_damped_fit_agrees_with_curve_fit():
    t = np.arange(0, 2.0, 1e-3)
    rng = np.random.default_rng(1)
    y = _signal(t, 0.5e-6, 12e-6, 0.8, 2 * np.pi * 7.1, 0.4) + 0.3e-6 * rng.standard_normal(len(t))
    fit = D.fit_damped_oscillation(t, y)
    p0 = [fit.Z0 * 1.1, fit.Z1 * 0.9, fit.tau * 1.2, fit.omega * 1.001, fit.phi + 0.1]
    ref, cov = curve_fit(_signal, t, y, p0=p0, method="trf", x_scale=[1e-6, 1e-6, 1, 1, 1],
                         ftol=1e-14, xtol=1e-14, gtol=1e-14)
    got = [fit.Z0, fit.Z1, fit.tau, fit.omega, fit.phi]
    for a, b, s in zip(got, ref, np.sqrt(np.diag(cov))):
        assert abs(a - b) < 1e-3 * s + 1e-12
    assert fit.errors["tau"] == pytest.approx(np.sqrt(cov[2, 2]), rel=0.05)


def test_undamped_signal_gives_lower_bound():
    t = np.arange(0, 2.0, 1e-3)
    fit = D.fit_damped_oscillation(t, 10e-6 * np.cos(OMEGA * t))
    assert fit.tau_lower_bound
    assert fit.tau > 2.0


def test_fit_rejects_short_series():
    t = np.arange(0, 0.2, 1e-3)
    with pytest.raises(D.FitConvergenceError):
        D.fit_damped_oscillation(t, np.cos(OMEGA * t))


def test_levenberg_marquardt_rosenbrock():
    def fun(p):
        r = np.array([10 * (p[1] - p[0] ** 2), 1 - p[0]])
        J = np.array([[-20 * p[0], 10.0], [-1.0, 0.0]])
        return r, J

    p, r, J, it, ok = D.levenberg_marquardt(fun, np.array([-1.2, 1.0]))
    assert ok and np.allclose(p, [1.0, 1.0], atol=1e-8)


# -- Mathieu -------------------------------------------------------------------
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0))
def test_monodromy_is_unimodular(w, wm):
    assert abs(np.linalg.det(D.monodromy(w, wm)) - 1) < 1e-9


def test_stability_threshold():
    r = D.stability_threshold()
    assert r == pytest.approx(0.87, abs=0.02)
    assert D.mathieu_stability(1.0, r + 0.01)[0]
    assert not D.mathieu_stability(1.0, r - 0.01)[0]
    assert D.mathieu_stability(1.0, 2.0)[0]


def test_monodromy_rejects_bad_input():
    with pytest.raises(ValueError):
        D.monodromy(0.0, 1.0)


# -- lifetimes -----------------------------------------------------------------
def test_lifetime_mle():
    rng = np.random.default_rng(0)
    loss = rng.exponential(0.3, 5000)
    tau, err, lower = D.lifetime_from_losses(loss, 0.5)
    assert not lower and tau == pytest.approx(0.3, abs=3 * err)
    loss[loss <= 0.5] = np.inf
    tau, err, lower = D.lifetime_from_losses(np.full(10, np.inf), 0.5, 0.1)
    assert lower and math.isinf(err) and tau == pytest.approx(10 * 0.4 / 3)


def test_modulated_3d_short_run():
    cfg = P.TrapConfig()
    spec = D.EnsembleSpec(N=12, seed=2, Z1=0.0, dim=3)
    ens = D.sample_thermal_ensemble(spec, cfg)
    assert ens.position.shape == (12, 3)
    dt = 1 / 30e3 / 40
    icfg = D.IntegratorConfig(dt=dt, t_max=2e-3, sample_interval=1e-4, scheme="rk4")
    a = D.integrate_modulated_3d(ens, cfg, icfg)
    b = D.integrate_modulated_3d(ens, cfg, icfg, workers=3)
    assert np.array_equal(a.loss_times, b.loss_times)
    assert a.alive[-1] == 12
    with pytest.raises(D.TimeStepError):
        D.integrate_modulated_3d(ens, cfg, D.IntegratorConfig(dt=1e-5, t_max=1e-3, scheme="rk4"))


def test_lifetime_scan_single_particle():
    spec = D.EnsembleSpec(N=1, seed=0, Z1=0.0, dim=3)
    rows = D.lifetime_scan([30e3], P.TrapConfig(), spec, t_max=5e-3)
    assert len(rows) == 1
    assert rows[0]["N"] == 1 and rows[0]["lifetime_s"] > 0
