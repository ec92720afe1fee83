"""Instantaneous and cycle-averaged trapping potentials of the modulated guide.

The total field is split into a static part S(r) (Ioffe field B_z0, H wire,
stray transverse field) and the modulated part M(r) (five-wire guide plus the
rough field of the central wire, both at their current amplitudes), so that

    B(r, t) = S(r) + f(t) M(r),   f(t) = sign * cos(omega_m t + phase)

in AC mode and f = sign in DC mode.
"""
from __future__ import annotations

import functools
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import constants as C
from . import magnetostatics as ms
from .roughness import RoughRealization

DEFAULT_QUAD_NODES = 64


class OutOfWindowError(ValueError):
    pass


class ModeError(ValueError):
    """Operation not defined for the trap's modulation mode (AC vs DC)."""


class IllConditionedFitError(ValueError):
    pass


class MissingTransverseDataError(ValueError):
    pass


@dataclass(frozen=True)
class ModulationSpec:
    omega_m: float = 2 * np.pi * 30e3  # rad/s, 0 for DC
    I_c: float = 13e-3
    I_b: float = 15e-3
    phase: float = 0.0
    sign: int = 1

    def __post_init__(self):
        if self.omega_m < 0:
            raise ValueError("omega_m must be >= 0")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @property
    def is_ac(self) -> bool:
        return self.omega_m > 0

    @property
    def period(self) -> float:
        if not self.is_ac:
            raise ModeError("DC modulation has no period")
        return 2 * np.pi / self.omega_m

    def factor(self, t):
        """Current multiplier f(t) applied to both amplitudes."""
        if not self.is_ac:
            return float(self.sign) * np.ones_like(np.asarray(t, dtype=float))
        return self.sign * np.cos(self.omega_m * np.asarray(t, dtype=float) + self.phase)

    @classmethod
    def dc(cls, sign: int = 1, I_c: float = 13e-3, I_b: float = 15e-3):
        return cls(0.0, I_c, I_b, 0.0, sign)


@dataclass(frozen=True)
class GuideGeometry:
    d: float = 2.5e-6  # edge-to-edge gap
    wire_len: float = 2e-3
    outer_offset: float = ms.DEFAULT_OUTER_OFFSET
    width: float = ms.WIRE_WIDTH
    height: float = 7e-6  # nominal height of the field zero


@dataclass(frozen=True)
class HWireSpec:
    current: float = 0.4
    leg_separation: float = ms.DEFAULT_H_LEG_SEPARATION
    depth: float = ms.DEFAULT_H_DEPTH
    leg_length: float = ms.DEFAULT_H_LEG_LENGTH
    # "harmonic": curl- and divergence-free second-order expansion about the
    # trap centre; "full": Biot-Savart of the two legs
    model: str = "harmonic"

    def __post_init__(self):
        if self.model not in ("harmonic", "full"):
            raise ValueError(f"unknown H-wire model {self.model!r}")


@dataclass(frozen=True, eq=False)
class TrapConfig:
    guide: GuideGeometry = GuideGeometry()
    h_wire: HWireSpec = HWireSpec()
    B_z0: float = 1.8e-4
    stray: tuple = (0.0, 0.0)
    roughness: Optional[RoughRealization] = None
    modulation: ModulationSpec = ModulationSpec()
    mass: float = C.M_RB87

    def __post_init__(self):
        if self.B_z0 <= 0:
            raise ValueError("B_z0 must be positive")
        if self.roughness is not None:
            rms = np.sqrt(np.mean((self.modulation.I_c * self.roughness.dBz) ** 2))
            if rms > 0 and self.B_z0 / rms < 100:
                warnings.warn(f"B_z0 is only {self.B_z0 / rms:.3g} x the rough field rms; "
                              "the cycle-averaged expansion degrades", RuntimeWarning)

    def with_modulation(self, **kw) -> "TrapConfig":
        return replace(self, modulation=replace(self.modulation, **kw))

    def with_roughness(self, real: Optional[RoughRealization]) -> "TrapConfig":
        return replace(self, roughness=real)

    @property
    def moment(self) -> float:
        return C.MU_B


@dataclass(frozen=True)
class PotentialProfile:
    z_grid: np.ndarray
    V: np.ndarray  # J
    kind: str  # dc | ac-averaged | ac-eq1 | measured
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        z = np.asarray(self.z_grid, float)
        V = np.asarray(self.V, float)
        if z.shape != V.shape or z.ndim != 1 or len(z) < 3:
            raise ValueError("profile needs matching 1D z and V arrays")
        if not np.all(np.isfinite(V)):
            raise ValueError("non-finite potential values")
        dz = np.diff(z)
        if not np.allclose(dz, dz[0], rtol=1e-6, atol=0):
            raise ValueError("profile grid must be uniform")
        object.__setattr__(self, "z_grid", z)
        object.__setattr__(self, "V", V)

    def save(self, path, extra_header: Optional[dict] = None):
        head = {"kind": self.kind, "meta": self.meta}
        lines = [f"# profile: {json.dumps(head, sort_keys=True, default=float)}"]
        for k, v in (extra_header or {}).items():
            lines.append(f"# {k}: {v}")
        lines.append("# columns: z_um V_nK")
        lines += [f"{float(z) * 1e6!r} {float(v) / C.K_B * 1e9!r}" for z, v in zip(self.z_grid, self.V)]
        Path(path).write_text("\n".join(lines) + "\n")
        return Path(path)

    @classmethod
    def load(cls, path) -> "PotentialProfile":
        head, rows = None, []
        for line in Path(path).read_text().splitlines():
            if line.startswith("# profile:"):
                head = json.loads(line.split(":", 1)[1])
            elif line and not line.startswith("#"):
                rows.append([float(v) for v in line.split()])
        if head is None:
            raise ValueError(f"{path}: missing profile header")
        a = np.array(rows)
        return cls(a[:, 0] * 1e-6, a[:, 1] * 1e-9 * C.K_B, head["kind"], head["meta"])


@dataclass(frozen=True)
class HarmonicFitResult:
    omega: float
    center: float
    offset: float
    z: np.ndarray
    residual_profile: np.ndarray
    rms_residual: float
    window: tuple


class TrapModel:
    """Precomputed field sources for a TrapConfig."""

    def __init__(self, cfg: TrapConfig):
        self.cfg = cfg
        g, mod = cfg.guide, cfg.modulation
        self.guide_layout = ms.build_five_wire_layout(g.d, g.wire_len, mod.I_c, mod.I_b,
                                                      g.outer_offset, g.width)
        hw = cfg.h_wire
        self.h_layout = ms.build_h_wire_layout(hw.current, hw.current, hw.leg_separation,
                                               hw.depth, hw.leg_length, g.height)
        self.h_center = np.array([0.0, g.height, 0.0])
        self.B_c, self.B_H_prime, self.B_curv = ms.h_wire_local_expansion(self.h_layout,
                                                                          self.h_center)
        self.rough = cfg.roughness

    # -- sources ---------------------------------------------------------
    def h_field(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        if self.cfg.h_wire.model == "full":
            return ms.field_at(self.h_layout, pts)
        u, v, w = (pts - self.h_center).T
        half = 0.5 * self.B_curv
        B = np.empty_like(pts)
        B[:, 0] = -half * u * w
        B[:, 1] = self.B_H_prime * w - half * v * w
        B[:, 2] = self.B_c + self.B_H_prime * v + half * (w * w - 0.5 * (u * u + v * v))
        return B

    def static_field(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        B = self.h_field(pts)
        B[:, 0] += self.cfg.stray[0]
        B[:, 1] += self.cfg.stray[1]
        B[:, 2] += self.cfg.B_z0
        return B

    def check_window(self, z):
        if self.rough is None:
            return
        lo, hi = self.rough.usable_window()
        z = np.asarray(z)
        if np.any(z < lo - 1e-15) or np.any(z > hi + 1e-15):
            raise OutOfWindowError(
                f"z outside the roughness usable window [{lo:.4g}, {hi:.4g}] m")

    def rough_field(self, z) -> np.ndarray:
        """Rough field at the central-wire current amplitude, taken on the guide line."""
        z = np.asarray(z, float)
        out = np.zeros((z.size, 3))
        if self.rough is None:
            return out
        zg = self.rough.z_grid
        I = self.cfg.modulation.I_c
        for i, arr in enumerate((self.rough.dBx, self.rough.dBy, self.rough.dBz)):
            out[:, i] = I * np.interp(z.ravel(), zg, arr)
        return out

    def modulated_field(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        return ms.field_at(self.guide_layout, pts) + self.rough_field(pts[:, 2])

    def split(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        self.check_window(pts[:, 2])
        return self.static_field(pts), self.modulated_field(pts)


@functools.lru_cache(maxsize=32)
def trap_model(cfg: TrapConfig) -> TrapModel:
    return TrapModel(cfg)


def gauss_legendre_phase(nodes: int = DEFAULT_QUAD_NODES):
    """Nodes on [0, 2 pi) and weights summing to one."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    return np.pi * (x + 1.0), 0.5 * w


def _averaged_magnitude(S, M, sign, nodes):
    theta, w = gauss_legendre_phase(nodes)
    c = sign * np.cos(theta)
    B = S[:, None, :] + c[None, :, None] * M[:, None, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", B, B)) @ w


# -- potentials ------------------------------------------------------------
def instantaneous_potential(cfg: TrapConfig, r, t: float = 0.0):
    """mu_B |B(r, t)| in J.  ``r`` is a 3-vector or an (N, 3) array."""
    r = np.asarray(r, float)
    S, M = trap_model(cfg).split(r)
    B = S + np.asarray(cfg.modulation.factor(t)).reshape(-1, 1) * M
    V = cfg.moment * np.linalg.norm(B, axis=1)
    return float(V[0]) if r.ndim == 1 else V


def averaged_potential_numeric(cfg: TrapConfig, r, nodes: int = DEFAULT_QUAD_NODES):
    """One-cycle average of the instantaneous potential (Gauss-Legendre in phase)."""
    if not cfg.modulation.is_ac:
        raise ModeError("cycle average requires omega_m > 0")
    r = np.asarray(r, float)
    S, M = trap_model(cfg).split(r)
    V = cfg.moment * _averaged_magnitude(S, M, cfg.modulation.sign, nodes)
    return float(V[0]) if r.ndim == 1 else V


def averaged_potential_eq1(cfg: TrapConfig, r):
    """Leading-order expansion of the cycle average for a dominant longitudinal field.

    <|B_z|> is the static longitudinal field (the modulated part averages out),
    the static/modulated transverse cross term vanishes and <cos^2> = 1/2.  The
    transverse energy uses the local static longitudinal field.
    """
    if not cfg.modulation.is_ac:
        raise ModeError("cycle average requires omega_m > 0")
    r = np.asarray(r, float)
    S, M = trap_model(cfg).split(r)
    Bz = np.abs(S[:, 2])
    perp2 = np.sum(S[:, :2] ** 2, axis=1) + 0.5 * np.sum(M[:, :2] ** 2, axis=1)
    V = cfg.moment * (Bz + perp2 / (2 * Bz))
    return float(V[0]) if r.ndim == 1 else V


# -- transverse minimum ----------------------------------------------------
_STENCIL = np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]],
                    float)


def _fd_grad_hess(vals, h):
    f0, fxp, fxm, fyp, fym, fpp, fpm, fmp, fmm = vals.T
    g = np.column_stack([(fxp - fxm) / (2 * h), (fyp - fym) / (2 * h)])
    hxx = (fxp - 2 * f0 + fxm) / h**2
    hyy = (fyp - 2 * f0 + fym) / h**2
    hxy = (fpp - fpm - fmp + fmm) / (4 * h * h)
    return g, hxx, hyy, hxy


def transverse_minimum(cfg: TrapConfig, z, averaged: Optional[bool] = None, guess=None,
                       step: float = 20e-9, max_iter: int = 30, tol: float = 1e-13,
                       nodes: int = DEFAULT_QUAD_NODES):
    """Vectorized Newton search for the transverse potential minimum at each z.

    Returns (xy, V_min, hessian) with xy of shape (n, 2) and hessian entries
    (hxx, hyy, hxy) in J/m^2.  ``averaged`` defaults to the modulation mode.
    """
    z = np.atleast_1d(np.asarray(z, float))
    model = trap_model(cfg)
    model.check_window(z)
    if averaged is None:
        averaged = cfg.modulation.is_ac
    n = z.size
    xy = np.tile([0.0, cfg.guide.height], (n, 1)) if guess is None else np.array(guess, float)
    mod = cfg.modulation
    f_dc = float(mod.sign)
    rough = model.rough_field(z)
    Bh = None

    def values(points_xy):
        # points_xy: (n, k, 2) -> potential (n, k)
        k = points_xy.shape[1]
        pts = np.empty((n * k, 3))
        pts[:, :2] = points_xy.reshape(-1, 2)
        pts[:, 2] = np.repeat(z, k)
        S = model.static_field(pts)
        M = ms.field_at(model.guide_layout, pts) + np.repeat(rough, k, axis=0)
        if averaged:
            B = _averaged_magnitude(S, M, mod.sign, nodes)
        else:
            B = np.linalg.norm(S + f_dc * M, axis=1)
        return cfg.moment * B.reshape(n, k)

    active = np.ones(n, bool)
    for _ in range(max_iter):
        vals = values(xy[:, None, :] + step * _STENCIL[None, :, :])
        g, hxx, hyy, hxy = _fd_grad_hess(vals, step)
        det = hxx * hyy - hxy**2
        if np.any(det <= 0) or np.any(hxx <= 0):
            raise ms.NoConvergenceError("transverse potential is not locally convex")
        dx = -(hyy * g[:, 0] - hxy * g[:, 1]) / det
        dy = -(-hxy * g[:, 0] + hxx * g[:, 1]) / det
        dxy = np.column_stack([dx, dy])
        # limit the step to a fraction of the height
        lim = 0.2 * cfg.guide.height
        scale = np.minimum(1.0, lim / np.maximum(np.hypot(dx, dy), 1e-300))
        dxy *= scale[:, None]
        dxy[~active] = 0.0
        xy = xy + dxy
        active = np.hypot(dxy[:, 0], dxy[:, 1]) > tol
        if not np.any(active):
            break
    else:
        raise ms.NoConvergenceError("transverse minimum search did not converge")
    vals = values(xy[:, None, :] + step * _STENCIL[None, :, :])
    _, hxx, hyy, hxy = _fd_grad_hess(vals, step)
    return xy, vals[:, 0], np.column_stack([hxx, hyy, hxy])


def transverse_frequencies(cfg: TrapConfig, z: float = 0.0, averaged: Optional[bool] = None):
    """Eigen-frequencies (rad/s, ascending) of the transverse potential at its minimum."""
    _, _, H = transverse_minimum(cfg, [z], averaged=averaged)
    hxx, hyy, hxy = H[0]
    ev = np.linalg.eigvalsh(np.array([[hxx, hxy], [hxy, hyy]]))
    return np.sqrt(ev / cfg.mass)


# -- longitudinal profiles -------------------------------------------------
def default_z_grid(cfg: TrapConfig, half_width: float = 400e-6, dz: float = 0.5e-6):
    if cfg.roughness is not None:
        lo, hi = cfg.roughness.usable_window()
        z = cfg.roughness.z_grid
        return z[(z >= lo) & (z <= hi)]
    n = int(round(half_width / dz))
    return np.arange(-n, n + 1) * dz


def longitudinal_profile(cfg: TrapConfig, z_grid=None, kind: Optional[str] = None,
                         nodes: int = DEFAULT_QUAD_NODES) -> PotentialProfile:
    """Potential along the guide.

    ``kind`` is "dc" (mu |B_z0 + B_H,z + f dB_z| on the guide line), "ac-averaged"
    (numeric cycle average at the transverse minimum of each plane) or "ac-eq1"
    (leading-order expansion at the same minimum).  Defaults to the mode of
    the modulation.
    """
    z = default_z_grid(cfg) if z_grid is None else np.asarray(z_grid, float)
    model = trap_model(cfg)
    model.check_window(z)
    mod = cfg.modulation
    if kind is None:
        kind = "ac-averaged" if mod.is_ac else "dc"
    meta = {"B_z0": cfg.B_z0, "I_c": mod.I_c, "I_b": mod.I_b, "sign": mod.sign,
            "omega_m": mod.omega_m, "h_model": cfg.h_wire.model}
    if kind == "dc":
        line = np.column_stack([np.zeros_like(z), np.full_like(z, cfg.guide.height), z])
        Bz = model.static_field(line)[:, 2] + mod.sign * model.rough_field(z)[:, 2]
        V = cfg.moment * np.abs(Bz)
    elif kind in ("ac-averaged", "ac-eq1"):
        if not mod.is_ac:
            raise ModeError(f"{kind} profile requires omega_m > 0")
        xy, Vmin, _ = transverse_minimum(cfg, z, averaged=True, nodes=nodes)
        if kind == "ac-averaged":
            V = Vmin
        else:
            V = averaged_potential_eq1(cfg, np.column_stack([xy, z]))
        meta["min_x_rms"] = float(np.sqrt(np.mean(xy[:, 0] ** 2)))
    else:
        raise ValueError(f"unknown profile kind {kind!r}")
    return PotentialProfile(z, V, kind, meta)


def harmonic_fit(profile: PotentialProfile, window=None, temperature: float = 280e-9,
                 mass: float = C.M_RB87, n_sigma: float = 2.0) -> HarmonicFitResult:
    """Least-squares fit of offset + m omega^2 (z - z0)^2 / 2 over a window.

    ``window`` is (lo, hi) in metres or a half-width about the profile minimum.
    By default the half-width is ``n_sigma`` thermal widths at ``temperature``,
    found from a preliminary fit over the whole grid.
    """
    z, V = profile.z_grid, profile.V
    if window is None:
        pre = _quadratic_fit(z, V, mass)
        sigma = np.sqrt(C.K_B * temperature / (mass * pre[0] ** 2))
        window = (pre[1] - n_sigma * sigma, pre[1] + n_sigma * sigma)
    elif np.isscalar(window):
        zc = z[np.argmin(V)]
        window = (zc - window, zc + window)
    lo, hi = window
    if lo < z[0] - 1e-15 or hi > z[-1] + 1e-15:
        raise OutOfWindowError(f"fit window [{lo:.4g}, {hi:.4g}] exceeds the profile grid")
    sel = (z >= lo) & (z <= hi)
    omega, z0, offset, resid = _quadratic_fit(z[sel], V[sel], mass, with_residual=True)
    return HarmonicFitResult(omega, z0, offset, z[sel], resid, float(np.sqrt(np.mean(resid**2))),
                             (float(lo), float(hi)))


def _quadratic_fit(z, V, mass, with_residual=False):
    if len(z) < 10:
        raise IllConditionedFitError("harmonic fit needs at least 10 grid points")
    zc = 0.5 * (z[0] + z[-1])
    s = 0.5 * (z[-1] - z[0]) or 1.0
    x = (z - zc) / s
    A = np.column_stack([np.ones_like(x), x, x * x])
    coef, *_ = np.linalg.lstsq(A, V, rcond=None)
    a, b, c = coef
    curv = 2 * c / s**2  # d2V/dz2
    omega = np.sqrt(curv / mass) if curv > 0 else 0.0
    z0 = zc - b * s / (2 * c) if c != 0 else zc
    offset = a - b * b / (4 * c) if c != 0 else a
    if not with_residual:
        return omega, z0
    return float(omega), float(z0), float(offset), V - A @ coef


def residual_rms_kelvin(fit: HarmonicFitResult) -> float:
    return fit.rms_residual / C.K_B


def calibrate_dc_roughness(cfg: TrapConfig, target_rms: float, window=None,
                           temperature: float = 280e-9) -> TrapConfig:
    """Rescale the realization so the DC harmonic-fit residual has rms ``target_rms`` (K)."""
    if cfg.roughness is None:
        raise MissingTransverseDataError("configuration carries no roughness realization")
    dc = cfg.with_modulation(omega_m=0.0)
    fit = harmonic_fit(longitudinal_profile(dc), window, temperature, cfg.mass)
    now = fit.rms_residual / C.K_B
    if now == 0:
        raise ValueError("zero residual roughness; cannot calibrate")
    real = cfg.roughness.scaled(target_rms / now)
    meta = dict(real.meta)
    meta["calibrated_residual_rms_K"] = target_rms
    meta["calibration_window"] = list(fit.window)
    return cfg.with_roughness(replace(real, meta=meta))


# -- closed forms and estimates -------------------------------------------
def predicted_omega_z_ac(omega_z_dc: float, B_H_prime: float, B_z0: float) -> float:
    if omega_z_dc < 0 or B_z0 <= 0:
        raise ValueError("need omega_z_dc >= 0 and B_z0 > 0")
    return float(np.sqrt(omega_z_dc**2 + C.MU_B * B_H_prime**2 / (C.M_RB87 * B_z0)))


def larmor_frequency(B: float) -> float:
    """mu_B B / (4 pi hbar) in Hz."""
    return C.MU_B * B / (4 * np.pi * C.HBAR)


def adiabaticity_ratio(omega_m: float, B_z0: float):
    """((omega_m / 2 pi) / f_Larmor, f_Larmor)."""
    if omega_m < 0 or B_z0 <= 0:
        raise ValueError("need omega_m >= 0 and B_z0 > 0")
    fL = larmor_frequency(B_z0)
    return omega_m / (2 * np.pi) / fL, fL


def micromotion_energy(force_amplitude, omega_m: float, mass: float = C.M_RB87):
    """Mean kinetic energy F^2 / (4 m omega_m^2) of the driven micro-motion."""
    return np.asarray(force_amplitude) ** 2 / (4 * mass * omega_m**2)


def micromotion_roughness_estimate(cfg: TrapConfig) -> float:
    """rms variation along z (J) of the micro-motion energy driven by the rough force."""
    mod = cfg.modulation
    if not mod.is_ac:
        raise ModeError("micro-motion is defined for the modulated trap only")
    if cfg.roughness is None:
        return 0.0
    z = default_z_grid(cfg)
    dBz = trap_model(cfg).rough_field(z)[:, 2]
    F = cfg.moment * np.gradient(dBz, z)
    E = micromotion_energy(F, mod.omega_m, cfg.mass)
    return float(np.std(E))


def transverse_defect_estimates(cfg: TrapConfig):
    """(meander rms in m, rms relative change of the transverse gradient).

    Meander: rough transverse field divided by the guide gradient.  The rough
    gradient is estimated from the z-derivative of the rough transverse field,
    which for the evanescent field of a surface source has the same magnitude
    as its transverse derivatives.
    """
    real = cfg.roughness
    if real is None:
        raise MissingTransverseDataError("configuration carries no roughness realization")
    z = default_z_grid(cfg)
    B = trap_model(cfg).rough_field(z)[:, :2]
    g = guide_gradient(cfg)
    meander = np.sqrt(np.mean(np.sum(B**2, axis=1))) / g
    dB = np.gradient(B, z, axis=0)
    mod = np.sqrt(np.mean(np.sum(dB**2, axis=1))) / g
    return float(meander), float(mod)


def guide_gradient(cfg: TrapConfig) -> float:
    """Quadrupole gradient of the five-wire guide at its field zero (T/m)."""
    lay = trap_model(cfg).guide_layout
    x0, y0 = ms.find_zero_line(lay, 0.0, (0.0, cfg.guide.height))
    return ms.transverse_gradient(lay, (x0, y0, 0.0))
