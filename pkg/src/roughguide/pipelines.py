"""End-to-end pipelines shared by the command line and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import analysis as A
from . import constants as C
from . import dynamics as D
from . import potential as P
from . import roughness as R

OMEGA_Z_DC = 2 * np.pi * 7.1


def trap_config(I_c=13e-3, I_b=15e-3, I_h=0.4, B_z0=1.8e-4, stray=(0.0, 0.0), f_mod=30e3,
                kind="ac", h_model="harmonic", roughness=None) -> P.TrapConfig:
    if kind == "ac":
        mod = P.ModulationSpec(2 * np.pi * f_mod, I_c, I_b, 0.0, 1)
    elif kind in ("dc_positive", "dc_negative"):
        mod = P.ModulationSpec.dc(1 if kind == "dc_positive" else -1, I_c, I_b)
    else:
        raise ValueError(f"unknown scenario kind {kind!r}")
    return P.TrapConfig(h_wire=P.HWireSpec(current=I_h, model=h_model), B_z0=B_z0,
                        stray=tuple(stray), roughness=roughness, modulation=mod)


def trap_from_scenario(sc, roughness=None, kind: Optional[str] = None) -> P.TrapConfig:
    t = sc.section("trap")
    return trap_config(t["I_c"], t["I_b"], t["I_h"], t["B_z0"], (t["stray_x"], t["stray_y"]),
                       t["f_mod"], kind or sc.kind, t["h_model"], roughness)


# -- roughness suppression ---------------------------------------------------
@dataclass
class SuppressionResult:
    dc_plus: P.HarmonicFitResult
    dc_minus: P.HarmonicFitResult
    ac: P.HarmonicFitResult
    ideal_ratio: float
    noisy_dc_rms: float
    noisy_ac_rms: float
    noisy_ratio: float
    pixel_z: np.ndarray
    noise: np.ndarray
    profiles: dict
    cfg: P.TrapConfig  # calibrated configuration of the ideal comparison


def roughness_suppression(seed: int = 0, target_rms: float = 30e-9, noise_floor: float = 0.0,
                          pixel: float = A.PIXEL, f_mod: float = 30e3,
                          cfg: Optional[P.TrapConfig] = None) -> SuppressionResult:
    """DC+/DC-/AC residual roughness on one calibrated realization.

    The ideal comparison uses the residuals on the computation grid, with the
    DC residual rms calibrated to ``target_rms`` (K).  The noisy comparison
    works on pixel-averaged residuals, recalibrated so the imaged DC residual
    has rms ``target_rms``, with the same per-pixel Gaussian noise (rms
    ``noise_floor``) added to DC and AC.
    """
    if cfg is None:
        cfg = trap_config(f_mod=f_mod, roughness=R.spectral_realization(seed))
    if target_rms > 0:
        cfg = P.calibrate_dc_roughness(cfg, target_rms)
    else:
        cfg = cfg.with_roughness(None)
    (dcp, dcm, ac), profiles = _three_fits(cfg)
    ideal = dcp.rms_residual / ac.rms_residual if ac.rms_residual > 0 else np.inf
    _, rdc = A.pixel_average(dcp.z, dcp.residual_profile / C.K_B, pixel)
    img = cfg
    if target_rms > 0:
        img = cfg.with_roughness(cfg.roughness.scaled(target_rms / np.sqrt(np.mean(rdc**2))))
    (dcp_i, _, ac_i), _ = _three_fits(img, with_minus=False)
    zp, rdc = A.pixel_average(dcp_i.z, dcp_i.residual_profile / C.K_B, pixel)
    _, rac = A.pixel_average(ac_i.z, ac_i.residual_profile / C.K_B, pixel)
    noise = A.imaging_noise(len(zp), noise_floor, seed) if noise_floor > 0 else np.zeros(len(zp))
    n_dc = float(np.sqrt(np.mean((rdc + noise) ** 2)))
    n_ac = float(np.sqrt(np.mean((rac + noise) ** 2)))
    return SuppressionResult(dcp, dcm, ac, float(ideal), n_dc, n_ac,
                             n_dc / n_ac if n_ac > 0 else np.inf, zp, noise, profiles, cfg)


def _three_fits(cfg: P.TrapConfig, with_minus: bool = True):
    prof = {"dc_positive": P.longitudinal_profile(cfg.with_modulation(omega_m=0.0, sign=1)),
            "ac": P.longitudinal_profile(cfg)}
    dcp = P.harmonic_fit(prof["dc_positive"])
    dcm = None
    if with_minus:
        prof["dc_negative"] = P.longitudinal_profile(cfg.with_modulation(omega_m=0.0, sign=-1))
        dcm = P.harmonic_fit(prof["dc_negative"], window=dcp.window)
    ac = P.harmonic_fit(prof["ac"], window=dcp.window)
    return (dcp, dcm, ac), prof


# -- centre-of-mass damping ----------------------------------------------------
def rough_1d_profile(omega_z: float, rough_energy: np.ndarray, z: np.ndarray,
                     mass: float = C.M_RB87) -> P.PotentialProfile:
    return P.PotentialProfile(z, 0.5 * mass * omega_z**2 * z**2 + rough_energy, "dc",
                              {"omega_z": omega_z})


def calibrated_rough_energy(seed: int, realization: int, rms: float, z_extent: float = 4e-3,
                            current: float = 13e-3):
    """(z, mu_B I dB_z) on the usable window, scaled to energy rms ``rms`` (K)."""
    real = R.spectral_realization(seed, realization, z_extent=z_extent)
    lo, hi = real.usable_window()
    sel = (real.z_grid >= lo) & (real.z_grid <= hi)
    if rms > 0:
        real = R.calibrate_to_energy_rms(real, rms, current)
        e = C.MU_B * current * real.dBz[sel]
    else:
        e = np.zeros(int(sel.sum()))
    return real.z_grid[sel], e


@dataclass
class DampingRow:
    scale: float
    rms: float
    fit: D.DampingFitResult
    per_realization_tau: list
    t: np.ndarray
    cm: np.ndarray


def damping_vs_roughness_study(scales: Sequence[float], n_realizations: int = 5,
                               ens: D.EnsembleSpec = D.EnsembleSpec(),
                               icfg: D.IntegratorConfig = D.IntegratorConfig(),
                               base_rms: float = 80e-9, omega_z: float = OMEGA_Z_DC,
                               workers: int = 1, z_extent: float = 4e-3) -> list:
    """CM damping time versus roughness scale.

    For every scale the same ``n_realizations`` realizations (seeds keyed by
    realization index) are rescaled, an ensemble is propagated in each, the
    CM traces are averaged over realizations and the average is fitted.
    """
    if n_realizations < 1:
        raise ValueError("need at least one realization")
    rows = []
    base = [calibrated_rough_energy(ens.seed, k, base_rms, z_extent) for k in range(n_realizations)]
    for s in scales:
        traces, taus = [], []
        t = None
        for k, (z, e) in enumerate(base):
            prof = rough_1d_profile(omega_z, s * e, z)
            states = D.sample_thermal_ensemble(_realization_spec(ens, k), prof)
            tr = D.integrate_static_1d(states, prof, icfg, workers=workers,
                                       check_period=2 * np.pi / omega_z)
            t = tr.t
            traces.append(tr.cm)
            try:
                taus.append(D.fit_damped_oscillation(tr.t, tr.cm).tau)
            except D.FitConvergenceError:
                taus.append(float("nan"))
        cm = np.mean(np.array(traces), axis=0)
        fit = D.fit_damped_oscillation(t, cm)
        rows.append(DampingRow(float(s), float(s * base_rms), fit, taus, t, cm))
    return rows


def _realization_spec(ens: D.EnsembleSpec, k: int) -> D.EnsembleSpec:
    # distinct, reproducible particle streams per realization
    return replace(ens, seed=int(ens.seed) * 1000003 + k)


# -- Boltzmann round trip --------------------------------------------------------
@dataclass
class RoundTripResult:
    chi2_reduced: float
    dof: int
    offset: float
    extracted: A.ExtractedPotential
    expected: np.ndarray


def boltzmann_round_trip(seed: int = 0, N: int = 100_000, T: float = 280e-9,
                         rough_rms: float = 30e-9, bin_width: float = 2e-6,
                         threshold: float = 10.0) -> RoundTripResult:
    """Sample a known rough potential, bin, invert and compare bin by bin."""
    z, e = calibrated_rough_energy(seed, 0, rough_rms, z_extent=2e-3)
    prof = rough_1d_profile(OMEGA_Z_DC, e, z)
    ens = D.sample_thermal_ensemble(D.EnsembleSpec(N=N, temperature=T, Z1=0.0, seed=seed), prof)
    lo = np.ceil(z[0] / bin_width) * bin_width
    hi = np.floor(z[-1] / bin_width) * bin_width
    dens = A.bin_density(ens, bin_width, lo, hi)
    ext = A.extract_potential(dens, T, threshold)
    # oracle: bin-integrated Boltzmann factor of the same spline the sampler used
    sp = CubicSpline(prof.z_grid, prof.V)
    kT = C.K_B * T
    fine = 16
    expected = np.empty(len(dens.counts))
    for i in range(len(dens.counts)):
        zz = dens.edges[i] + (np.arange(fine) + 0.5) * bin_width / fine
        expected[i] = -kT * np.log(np.mean(np.exp(-(sp(zz) - prof.V.min()) / kT)))
    m = ext.mask
    w = 1 / ext.sigma[m] ** 2
    d = ext.V[m] - expected[m]
    offset = float(np.sum(w * d) / np.sum(w))
    chi2 = float(np.sum(w * (d - offset) ** 2))
    dof = int(m.sum() - 1)
    return RoundTripResult(chi2 / dof, dof, offset, ext, expected)
