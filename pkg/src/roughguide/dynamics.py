"""Classical trajectories of non-interacting atoms.

1D runs integrate the longitudinal motion in a static gridded potential with
velocity Verlet; 3D runs integrate the full modulated trap with fixed-step
RK4.  Per-particle work is independent, so particles are split into chunks and
run on a thread pool (the numba kernels release the GIL); every observable is
reduced in particle-index order afterwards, so results do not depend on the
number of workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import constants as C
from . import magnetostatics as ms
from .potential import (PotentialProfile, TrapConfig, harmonic_fit, longitudinal_profile,
                        trap_model, transverse_frequencies, transverse_minimum)
from .rng import stream

# sub-stream indices under the master seed
STREAM_POSITION = 11
STREAM_VELOCITY = 12


class DomainError(RuntimeError):
    """A particle left the region where the potential is defined."""


class RejectionEfficiencyError(RuntimeError):
    pass


class TimeStepError(ValueError):
    pass


class FitConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnsembleSpec:
    N: int = 2000
    temperature: float = 280e-9
    Z1: float = 20e-6
    seed: int = 0
    dim: int = 1

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.dim not in (1, 3):
            raise ValueError("dim must be 1 or 3")


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 2e-5
    t_max: float = 2.0
    sample_interval: float = 1e-3
    scheme: str = "verlet"  # verlet (static forces) | rk4 (time-dependent forces)
    escape_radius: Optional[float] = None  # 3D only; default 5 thermal radii

    def __post_init__(self):
        if self.dt <= 0 or self.t_max <= 0 or self.sample_interval <= 0:
            raise ValueError("dt, t_max and sample_interval must be positive")
        if self.scheme not in ("verlet", "rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def sample_every(self) -> int:
        return max(1, int(round(self.sample_interval / self.dt)))

    def check_resolves(self, *periods: float):
        """dt must be at most 1/40 of every listed period."""
        fastest = min(periods)
        if self.dt > fastest / 40 * (1 + 1e-12):
            raise TimeStepError(f"dt = {self.dt:.3g} s exceeds 1/40 of the fastest period "
                                f"{fastest:.3g} s")


@dataclass
class Ensemble:
    position: np.ndarray  # (N,) or (N, 3)
    velocity: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, float)
        self.velocity = np.asarray(self.velocity, float)
        if self.position.shape != self.velocity.shape:
            raise ValueError("position and velocity shapes differ")
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("non-finite particle state")

    def __len__(self):
        return len(self.position)


@dataclass
class Trajectory1D:
    t: np.ndarray
    positions: np.ndarray  # (n_samples, N)
    max_energy_drift: np.ndarray  # per particle, relative
    meta: dict = field(default_factory=dict)

    @property
    def cm(self) -> np.ndarray:
        # fixed order reduction: numpy's pairwise sum over a C-contiguous row
        return np.ascontiguousarray(self.positions).sum(axis=1) / self.positions.shape[1]


@dataclass
class SurvivalRecord:
    t: np.ndarray
    alive: np.ndarray
    loss_times: np.ndarray  # inf for survivors
    meta: dict = field(default_factory=dict)


@dataclass
class DampingFitResult:
    Z0: float
    Z1: float
    tau: float
    omega: float
    phi: float
    errors: dict
    chi2_reduced: float
    r_squared: float
    tau_lower_bound: bool
    n_iter: int

    def as_dict(self):
        return {"Z0": self.Z0, "Z1": self.Z1, "tau": self.tau, "omega": self.omega,
                "phi": self.phi, "errors": self.errors, "chi2_reduced": self.chi2_reduced,
                "r_squared": self.r_squared, "tau_lower_bound": self.tau_lower_bound}


# -- worker pool -----------------------------------------------------------
def _chunks(n: int, workers: int):
    k = max(1, min(workers, n))
    edges = np.linspace(0, n, k + 1).astype(int)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run_pool(fn, n: int, workers: int):
    parts = _chunks(n, workers)
    if len(parts) == 1:
        return [fn(*parts[0])]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        return list(pool.map(lambda ab: fn(*ab), parts))


# -- thermal sampling ------------------------------------------------------
def _boltzmann_grid(z, V, T):
    w = np.exp(-(V - V.min()) / (C.K_B * T))
    return w


def _sample_positions_1d(spline, lo, hi, Vmin, T, seed, idx, batch=64):
    out = np.empty(len(idx))
    kT = C.K_B * T
    for j, i in enumerate(idx):
        rng = stream(seed, STREAM_POSITION, int(i))
        while True:
            u = rng.random((batch, 2))
            zc = lo + (hi - lo) * u[:, 0]
            ok = u[:, 1] < np.exp(-(spline(zc) - Vmin) / kT)
            if ok.any():
                out[j] = zc[np.argmax(ok)]
                break
    return out


def _maxwell(seed, idx, T, mass, dim):
    s = math.sqrt(C.K_B * T / mass)
    return np.array([stream(seed, STREAM_VELOCITY, int(i)).standard_normal(dim) * s for i in idx])


def sample_thermal_ensemble(spec: EnsembleSpec, source, min_acceptance: float = 1e-4) -> Ensemble:
    """Boltzmann positions by rejection sampling, Maxwell velocities, then a Z1 shift.

    ``source`` is a PotentialProfile (1D) or a TrapConfig (3D: longitudinal
    positions from the cycle-averaged profile, transverse positions Gaussian
    about the guide with the local cycle-averaged frequencies).  Particle i
    always draws from its own streams, so the ensemble is independent of N
    beyond the first i entries.
    """
    T = spec.temperature
    idx = np.arange(spec.N)
    if isinstance(source, PotentialProfile):
        profile = source
    elif isinstance(source, TrapConfig):
        profile = longitudinal_profile(source)
    else:
        raise TypeError("source must be a PotentialProfile or TrapConfig")
    z, V = profile.z_grid, profile.V
    w = _boltzmann_grid(z, V, T)
    if w.mean() < min_acceptance:
        raise RejectionEfficiencyError(
            f"rejection acceptance {w.mean():.2e} below {min_acceptance:.0e}; "
            "the sampling window is too wide for this temperature")
    spline = CubicSpline(z, V)
    pos = _sample_positions_1d(spline, z[0], z[-1], V.min(), T, spec.seed, idx)
    if spec.dim == 1:
        vel = _maxwell(spec.seed, idx, T, C.M_RB87, 1)[:, 0]
        return Ensemble(pos + spec.Z1, vel)
    cfg = source
    vel = _maxwell(spec.seed, idx, T, cfg.mass, 3)
    w_perp = transverse_frequencies(cfg, 0.0)
    s_perp = np.sqrt(C.K_B * T / (cfg.mass * w_perp**2))
    xy = np.array([stream(spec.seed, STREAM_POSITION + 100, int(i)).standard_normal(2) for i in idx])
    c, _, _ = transverse_minimum(cfg, [0.0])
    r = np.column_stack([c[0, 0] + s_perp[0] * xy[:, 0], c[0, 1] + s_perp[1] * xy[:, 1],
                         pos + spec.Z1])
    return Ensemble(r, vel)


# -- 1D static integration -------------------------------------------------
@numba.njit(cache=True, nogil=True)
def _spline_eval(x, z0, dz, coef):
    n = coef.shape[1]
    s = (x - z0) / dz
    i = int(math.floor(s))
    if i < 0 or i >= n:
        return np.nan, np.nan
    t = x - (z0 + i * dz)
    c0 = coef[0, i]
    c1 = coef[1, i]
    c2 = coef[2, i]
    c3 = coef[3, i]
    V = ((c0 * t + c1) * t + c2) * t + c3
    dV = (3.0 * c0 * t + 2.0 * c1) * t + c2
    return V, dV


@numba.njit(cache=True, nogil=True)
def _verlet_kernel(x0, v0, z0, dz, coef, Vmin, mass, dt, n_steps, every, out_pos, out_drift,
                   status):
    n_samples = out_pos.shape[0]
    for p in range(x0.shape[0]):
        x = x0[p]
        v = v0[p]
        V, dV = _spline_eval(x, z0, dz, coef)
        if math.isnan(V):
            status[p] = 1
            continue
        E0 = 0.5 * mass * v * v + V - Vmin
        a = -dV / mass
        drift = 0.0
        k = 0
        out_pos[0, p] = x
        for n in range(1, n_steps + 1):
            v += 0.5 * dt * a
            x += dt * v
            V, dV = _spline_eval(x, z0, dz, coef)
            if math.isnan(V):
                status[p] = 1
                break
            a = -dV / mass
            v += 0.5 * dt * a
            if n % every == 0:
                k = n // every
                if k < n_samples:
                    out_pos[k, p] = x
                E = 0.5 * mass * v * v + V - Vmin
                d = abs(E - E0) / E0 if E0 > 0 else abs(E - E0)
                if d > drift:
                    drift = d
        out_drift[p] = drift


def integrate_static_1d(ens: Ensemble, profile: PotentialProfile, icfg: IntegratorConfig,
                        mass: float = C.M_RB87, workers: int = 1,
                        check_period: Optional[float] = None) -> Trajectory1D:
    """Velocity Verlet in the cubic-spline (not-a-knot) interpolant of the profile."""
    if ens.position.ndim != 1:
        raise ValueError("integrate_static_1d needs a 1D ensemble")
    if check_period is None:
        check_period = 2 * np.pi / max(harmonic_fit(profile, window=None).omega, 1e-30)
    icfg.check_resolves(check_period)
    z, V = profile.z_grid, profile.V
    sp = CubicSpline(z, V, bc_type="not-a-knot")
    coef = np.ascontiguousarray(sp.c)
    dz = float(z[1] - z[0])
    n_steps, every = icfg.n_steps, icfg.sample_every
    n_samples = n_steps // every + 1
    N = len(ens)
    pos = np.zeros((n_samples, N))
    drift = np.zeros(N)
    status = np.zeros(N, np.int64)
    x0, v0 = ens.position, ens.velocity

    def work(a, b):
        p = np.zeros((n_samples, b - a))
        d = np.zeros(b - a)
        s = np.zeros(b - a, np.int64)
        _verlet_kernel(x0[a:b], v0[a:b], float(z[0]), dz, coef, float(V.min()), mass,
                       icfg.dt, n_steps, every, p, d, s)
        return a, b, p, d, s

    for a, b, p, d, s in _run_pool(work, N, workers):
        pos[:, a:b], drift[a:b], status[a:b] = p, d, s
    if status.any():
        raise DomainError(f"{int(status.sum())} particle(s) left the potential grid "
                          f"[{z[0]:.4g}, {z[-1]:.4g}] m")
    t = np.arange(n_samples) * every * icfg.dt
    return Trajectory1D(t, pos, drift, {"dt": icfg.dt, "n_steps": n_steps, "N": N})


# -- 3D modulated integration ----------------------------------------------
@numba.njit(cache=True, nogil=True)
def _accel_3d(x, y, z, f, wx, wy, wI, hc, hB, hg, hh, Bz0, Sx, Sy, mu_over_m, out):
    # five infinite z-wires scaled by f(t), harmonic H wire, uniform fields
    Bx = 0.0
    By = 0.0
    jxx = 0.0
    jxy = 0.0
    jyx = 0.0
    jyy = 0.0
    for i in range(wx.shape[0]):
        dx = x - wx[i]
        dy = y - wy[i]
        r2 = dx * dx + dy * dy
        k = 2e-7 * wI[i] * f
        Bx -= k * dy / r2
        By += k * dx / r2
        r4 = r2 * r2
        jxx += 2.0 * k * dx * dy / r4
        jxy += k * (dy * dy - dx * dx) / r4
        jyx += k * (dy * dy - dx * dx) / r4
        jyy -= 2.0 * k * dx * dy / r4
    u = x - hc[0]
    v = y - hc[1]
    w = z - hc[2]
    Bx += -hh * u * w + Sx
    By += hg * w - hh * v * w + Sy
    Bz = Bz0 + hB + hg * v + hh * (w * w - 0.5 * (u * u + v * v))
    jxx += -hh * w
    jxz = -hh * u
    jyy += -hh * w
    jyz = hg - hh * v
    jzx = -hh * u
    jzy = hg - hh * v
    jzz = 2.0 * hh * w
    B = math.sqrt(Bx * Bx + By * By + Bz * Bz)
    c = -mu_over_m / B
    out[0] = c * (Bx * jxx + By * jyx + Bz * jzx)
    out[1] = c * (Bx * jxy + By * jyy + Bz * jzy)
    out[2] = c * (Bx * jxz + By * jyz + Bz * jzz)


@numba.njit(cache=True, nogil=True)
def _rk4_kernel(r0, v0, omega_m, phase, sign, dt, n_steps, wx, wy, wI, hc, hB, hg, hh, Bz0, Sx, Sy,
                mu_over_m, gx, gy, r_esc, t_loss):
    a = np.zeros(3)
    k = np.zeros((4, 6))
    s = np.zeros(6)
    q = np.zeros(6)
    r_esc2 = r_esc * r_esc
    for p in range(r0.shape[0]):
        for j in range(3):
            s[j] = r0[p, j]
            s[3 + j] = v0[p, j]
        for n in range(n_steps):
            t = n * dt
            for st in range(4):
                if st == 0:
                    c = 0.0
                elif st == 3:
                    c = dt
                else:
                    c = 0.5 * dt
                for j in range(6):
                    q[j] = s[j] if st == 0 else s[j] + c * k[st - 1, j]
                f = sign * math.cos(omega_m * (t + c) + phase) if omega_m > 0 else sign
                _accel_3d(q[0], q[1], q[2], f, wx, wy, wI, hc, hB, hg, hh, Bz0, Sx, Sy,
                          mu_over_m, a)
                for j in range(3):
                    k[st, j] = q[3 + j]
                    k[st, 3 + j] = a[j]
            for j in range(6):
                s[j] += dt / 6.0 * (k[0, j] + 2.0 * k[1, j] + 2.0 * k[2, j] + k[3, j])
            dx = s[0] - gx
            dy = s[1] - gy
            if dx * dx + dy * dy > r_esc2:
                t_loss[p] = (n + 1) * dt
                break


def _guide_arrays(cfg: TrapConfig):
    lay = trap_model(cfg).guide_layout
    mid = 0.5 * (lay.starts + lay.ends)
    return (np.ascontiguousarray(mid[:, 0]), np.ascontiguousarray(mid[:, 1]),
            np.ascontiguousarray(lay.currents))


def thermal_transverse_radius(cfg: TrapConfig, temperature: float) -> float:
    w = transverse_frequencies(cfg, 0.0, averaged=cfg.modulation.is_ac)
    return float(np.sqrt(C.K_B * temperature / (cfg.mass * w.min() ** 2)))


def integrate_modulated_3d(ens: Ensemble, cfg: TrapConfig, icfg: IntegratorConfig,
                           temperature: float = 280e-9, workers: int = 1) -> SurvivalRecord:
    """Fixed-step RK4 in the instantaneous field; particles beyond the escape
    radius from the guide line are lost.

    The guide wires are treated as infinitely long (the atoms stay within a
    few hundred um of the centre of 2 mm wires) and the H wire by its harmonic
    expansion; the rough field is not included.
    """
    if ens.position.ndim != 2 or ens.position.shape[1] != 3:
        raise ValueError("integrate_modulated_3d needs a 3D ensemble")
    mod = cfg.modulation
    w_perp_dc = transverse_frequencies(cfg.with_modulation(omega_m=0.0), 0.0, averaged=False)
    periods = [2 * np.pi / w_perp_dc.max()]
    if mod.is_ac:
        periods.append(mod.period)
    icfg.check_resolves(*periods)
    r_esc = icfg.escape_radius
    if r_esc is None:
        r_esc = 5 * thermal_transverse_radius(cfg, temperature)
    model = trap_model(cfg)
    wx, wy, wI = _guide_arrays(cfg)
    lay = model.guide_layout
    gx, gy = ms.find_zero_line(lay, 0.0, (0.0, cfg.guide.height))
    hc = model.h_center.copy()
    args = (float(mod.omega_m), float(mod.phase), float(mod.sign), icfg.dt, icfg.n_steps,
            wx, wy, wI, hc, float(model.B_c), float(model.B_H_prime), 0.5 * float(model.B_curv),
            float(cfg.B_z0), float(cfg.stray[0]), float(cfg.stray[1]), C.MU_B / cfg.mass,
            float(gx), float(gy), float(r_esc))
    r0, v0 = ens.position, ens.velocity
    N = len(ens)
    t_loss = np.full(N, np.inf)

    def work(a, b):
        tl = np.full(b - a, np.inf)
        _rk4_kernel(np.ascontiguousarray(r0[a:b]), np.ascontiguousarray(v0[a:b]), *args, tl)
        return a, b, tl

    for a, b, tl in _run_pool(work, N, workers):
        t_loss[a:b] = tl
    every = icfg.sample_every
    t = np.arange(icfg.n_steps // every + 1) * every * icfg.dt
    alive = (t_loss[None, :] > t[:, None]).sum(axis=1)
    return SurvivalRecord(t, alive, t_loss, {"escape_radius": r_esc, "dt": icfg.dt, "N": N,
                                             "omega_m": mod.omega_m, "stray": list(cfg.stray)})


# -- damped-oscillation fit --------------------------------------------------
def _model(p, t):
    Z0, Z1, g, w, ph = p
    env = np.exp(-g * t * t)
    c, s = np.cos(w * t + ph), np.sin(w * t + ph)
    f = Z0 + Z1 * env * c
    J = np.column_stack([np.ones_like(t), env * c, -Z1 * t * t * env * c, -Z1 * env * s * t,
                         -Z1 * env * s])
    return f, J


def levenberg_marquardt(fun, p0, max_iter: int = 500, xtol: float = 1e-10, lam0: float = 1e-3):
    """Minimize |r(p)|^2 for fun(p) -> (r, J).  Steps are accepted only when
    they lower the residual norm; converged when the relative step < xtol."""
    p = np.array(p0, float)
    r, J = fun(p)
    cost = r @ r
    lam = lam0
    for it in range(1, max_iter + 1):
        A = J.T @ J
        g = J.T @ r
        D = np.diag(np.maximum(np.diag(A), 1e-300))
        while True:
            try:
                step = -np.linalg.solve(A + lam * D, g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            p_new = p + step
            r_new, J_new = fun(p_new)
            cost_new = r_new @ r_new
            if np.isfinite(cost_new) and cost_new <= cost:
                break
            lam *= 10
            if lam > 1e20:
                return p, r, J, it, True
        rel = np.linalg.norm(step) / (np.linalg.norm(p) + 1e-300)
        p, r, J, cost = p_new, r_new, J_new, cost_new
        lam = max(lam / 10, 1e-15)
        if rel < xtol:
            return p, r, J, it, True
    return p, r, J, max_iter, False


def _initial_guess(t, y):
    Z0 = float(np.mean(y))
    dt = t[1] - t[0]
    yy = y - Z0
    spec = np.abs(np.fft.rfft(yy * np.hanning(len(yy)), 8 * len(yy)))
    freqs = np.fft.rfftfreq(8 * len(yy), dt)
    i = int(np.argmax(spec[1:]) + 1)
    if 1 <= i < len(spec) - 1:
        a, b, c = spec[i - 1], spec[i], spec[i + 1]
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
    else:
        shift = 0.0
    w = 2 * np.pi * (freqs[i] + shift * (freqs[1] - freqs[0]))
    # first extremum within one period fixes the amplitude; the phase follows
    n_per = max(2, int(round(2 * np.pi / w / dt)))
    Z1 = float(np.max(np.abs(yy[:n_per])))
    c = np.clip(yy[0] / Z1, -1, 1)
    ph = float(np.arccos(c))
    if len(yy) > 1 and yy[1] - yy[0] > 0:
        ph = -ph
    return Z0, Z1, w, ph


def fit_damped_oscillation(t, y, sigma: Optional[float] = None) -> DampingFitResult:
    """Fit Z0 + Z1 exp(-t^2/tau^2) cos(omega t + phi).

    The envelope is parametrized by g = 1/tau^2 so an undamped signal (g -> 0)
    stays inside the parameter space; tau beyond the series length is flagged
    as a lower bound.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if len(t) < 10:
        raise FitConvergenceError("too few samples")
    Z0, Z1, w, ph = _initial_guess(t, y)
    span = t[-1] - t[0]
    if span * w / (2 * np.pi) < 3:
        raise FitConvergenceError("series must span at least 3 oscillation periods")
    scale = max(float(np.std(y)), 1e-300)
    best = None
    for g0 in (1.0 / span**2, 4.0 / span**2, 25.0 / span**2):
        p0 = np.array([Z0 / scale, Z1 / scale, g0, w, ph])

        # amplitudes in units of the signal scale keep the normal matrix well conditioned
        def fun_scaled(p):
            f, J = _model(np.array([p[0] * scale, p[1] * scale, p[2], p[3], p[4]]), t)
            J[:, 2:] /= scale
            return (f - y) / scale, J

        p, r, J, it, ok = levenberg_marquardt(fun_scaled, p0)
        cost = float(r @ r)
        if ok and (best is None or cost < best[1]):
            best = (p, cost, J, it)
    if best is None:
        raise FitConvergenceError("Levenberg-Marquardt did not converge from any start "
                                  f"(initial omega {w:.4g} rad/s, Z1 {Z1:.3g})")
    p, cost, J, it = best
    Z0f, Z1f, g, wf, phf = p[0] * scale, p[1] * scale, p[2], p[3], p[4]
    if Z1f < 0:
        Z1f, phf = -Z1f, phf + np.pi
    phf = float((phf + np.pi) % (2 * np.pi) - np.pi)
    n, k = len(t), 5
    resid_var = cost * scale**2 / max(n - k, 1)
    try:
        cov = np.linalg.inv(J.T @ J) * resid_var / scale**2
    except np.linalg.LinAlgError:
        cov = np.full((5, 5), np.nan)
    # J columns are d(residual/scale)/d(p) with p = (Z0/scale, Z1/scale, g, w, ph)
    err = np.sqrt(np.abs(np.diag(cov)))
    err_Z0, err_Z1 = err[0] * scale, err[1] * scale
    g_err = err[2]
    lower = g <= 0 or (1 / math.sqrt(g) > span)
    tau = math.inf if g <= 0 else 1 / math.sqrt(g)
    tau_err = math.inf if g <= 0 else 0.5 * g_err * g ** -1.5
    chi2 = cost * scale**2 / (n - k) / (sigma**2) if sigma else 1.0
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - cost * scale**2 / ss_tot if ss_tot > 0 else 1.0
    return DampingFitResult(float(Z0f), float(Z1f), float(tau), float(wf), phf,
                            {"Z0": float(err_Z0), "Z1": float(err_Z1), "tau": float(tau_err),
                             "omega": float(err[3]), "phi": float(err[4])},
                            float(chi2), float(r2), bool(lower), int(it))


# -- Mathieu / Floquet -------------------------------------------------------
def monodromy(omega_perp_dc: float, omega_m: float, rtol: float = 1e-13):
    """State-transition matrix over one drive period of x'' + w^2 cos^2(w_m t) x = 0."""
    if omega_perp_dc <= 0 or omega_m <= 0:
        raise ValueError("frequencies must be positive")
    # dimensionless time s = omega_m t
    r2 = (omega_perp_dc / omega_m) ** 2

    def rhs(s, y):
        k = r2 * math.cos(s) ** 2
        return [y[1], -k * y[0], y[3], -k * y[2]]

    sol = solve_ivp(rhs, (0.0, 2 * np.pi), [1.0, 0.0, 0.0, 1.0], method="DOP853", rtol=rtol,
                    atol=1e-15)
    x1, v1, x2, v2 = sol.y[:, -1]
    return np.array([[x1, x2], [v1, v2]])


def mathieu_stability(omega_perp_dc: float, omega_m: float, margin: float = 1e-9):
    """(stable, Floquet multipliers) of the linearized transverse motion."""
    M = monodromy(omega_perp_dc, omega_m)
    mult = np.linalg.eigvals(M)
    return bool(abs(np.trace(M)) <= 2 + margin), mult


def stability_threshold(lo: float = 0.5, hi: float = 2.0, n_scan: int = 151, tol: float = 1e-6):
    """Largest omega_m / omega_perp_dc at which the motion is unstable.

    A scan from ``hi`` downwards finds the first unstable ratio; bisection on
    the trace condition refines the tongue edge.
    """
    ratios = np.linspace(hi, lo, n_scan)

    def excess(r):
        return abs(np.trace(monodromy(1.0, r))) - 2.0

    prev = ratios[0]
    if excess(prev) > 0:
        raise ValueError("motion unstable at the upper end of the scan")
    for r in ratios[1:]:
        if excess(r) > 0:
            return float(brentq(excess, r, prev, xtol=tol))
        prev = r
    raise ValueError("no instability found in the scanned range")


# -- studies ---------------------------------------------------------------
def lifetime_from_losses(loss_times, t_max: float, t_start: float = 0.0):
    """Censored exponential MLE: tau = total exposure / number of losses."""
    lt = np.asarray(loss_times, float)
    at_risk = lt > t_start
    n0 = int(at_risk.sum())
    if n0 == 0:
        return 0.0, 0.0, False
    end = np.minimum(lt[at_risk], t_max)
    exposure = float(np.sum(end - t_start))
    k = int(np.sum(lt[at_risk] <= t_max))
    if k == 0:
        return exposure / 3.0, math.inf, True
    tau = exposure / k
    return tau, tau / math.sqrt(k), False


def lifetime_scan(freqs_hz: Sequence[float], cfg: TrapConfig, ens_spec: EnsembleSpec,
                  t_max: float = 0.5, steps_per_period: int = 40, workers: int = 1,
                  fit_start: Optional[float] = None):
    """Lifetime versus modulation frequency.  Returns a list of dict rows."""
    rows = []
    for f in freqs_hz:
        c = cfg.with_modulation(omega_m=2 * np.pi * f)
        ens = sample_thermal_ensemble(ens_spec, c)
        w_dc = transverse_frequencies(c.with_modulation(omega_m=0.0), 0.0, averaged=False).max()
        dt = min(1 / f, 2 * np.pi / w_dc) / steps_per_period
        icfg = IntegratorConfig(dt=dt, t_max=t_max, sample_interval=max(dt, t_max / 500),
                                scheme="rk4")
        rec = integrate_modulated_3d(ens, c, icfg, ens_spec.temperature, workers)
        if fit_start is None:
            # skip one longitudinal period of initial spilling, but never more
            # than half the run
            w_z = harmonic_fit(longitudinal_profile(c)).omega
            start = min(2 * np.pi / w_z, 0.5 * t_max)
        else:
            start = fit_start
        tau, err, lower = lifetime_from_losses(rec.loss_times, t_max, start)
        rows.append({"f_mod_hz": float(f), "lifetime_s": tau, "error_s": err,
                     "lower_bound": lower, "lost": int(np.isfinite(rec.loss_times).sum()),
                     "N": len(ens), "record": rec})
    return rows
