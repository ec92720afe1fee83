"""Fields of straight current filaments, the five-wire guide and the H wire.

Coordinates: the upper chip surface is the plane y = 0, the guide wires run
along z and the atoms sit above them at y > 0.  The H wire lies on the lower
chip at y = -depth with its two current-carrying legs along x.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, root

from . import constants as C

WIRE_WIDTH = 700e-9
DEFAULT_CORE_RADIUS = WIRE_WIDTH / 2

# Centre offset of the outer pair, tuned so the field zero sits 7 um above the
# central wire for d = 2.5 um (edge gap), I_c = 13 mA, I_b = 15 mA.  See
# tune_outer_offset().
DEFAULT_OUTER_OFFSET = 8.68458267784292e-06

# H-wire geometry tuned (tune_h_geometry) so that with I_z1 = I_z2 = 0.4 A and
# B_z0 = 1.8 G the DC longitudinal frequency is 7.1 Hz and the transverse
# gradient B'_H moves the AC frequency to 11.3 Hz.
DEFAULT_H_LEG_SEPARATION = 2.5912319717233505e-3
DEFAULT_H_DEPTH = 9.243872164572443e-05
DEFAULT_H_LEG_LENGTH = 20e-3


class PointInsideCoreError(ValueError):
    """Raised when a field is requested inside a wire's core radius."""


class NoConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class WireSegment:
    start: np.ndarray
    end: np.ndarray
    current: float

    def __post_init__(self):
        s = np.asarray(self.start, dtype=float)
        e = np.asarray(self.end, dtype=float)
        if s.shape != (3,) or e.shape != (3,):
            raise ValueError("segment endpoints must be 3-vectors")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(e))):
            raise ValueError("segment endpoints must be finite")
        if np.array_equal(s, e):
            raise ValueError("degenerate segment (start == end)")
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "end", e)
        object.__setattr__(self, "current", float(self.current))


@dataclass(frozen=True)
class FieldVector:
    B: np.ndarray
    gradient: Optional[np.ndarray] = None  # gradient[i, j] = dB_i / dx_j

    def divergence(self) -> float:
        if self.gradient is None:
            raise ValueError("no gradient computed")
        return float(np.trace(self.gradient))


@dataclass(frozen=True)
class WireLayout:
    """Straight filaments plus a uniform field, stored as flat arrays."""

    starts: np.ndarray
    ends: np.ndarray
    currents: np.ndarray
    labels: tuple = ()
    uniform_field: np.ndarray = field(default_factory=lambda: np.zeros(3))
    core_radius: float = DEFAULT_CORE_RADIUS

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=float).reshape(-1, 3)
        ends = np.asarray(self.ends, dtype=float).reshape(-1, 3)
        currents = np.asarray(self.currents, dtype=float).reshape(-1)
        if not (len(starts) == len(ends) == len(currents)):
            raise ValueError("starts, ends and currents must have equal length")
        labels = tuple(self.labels) if self.labels else ("",) * len(currents)
        if len(labels) != len(currents):
            raise ValueError("one label per segment")
        if np.any(np.all(starts == ends, axis=1)):
            raise ValueError("degenerate segment (start == end)")
        for lab in set(labels):
            if not lab:
                continue
            cur = currents[[i for i, l in enumerate(labels) if l == lab]]
            if not np.all(cur == cur[0]):
                raise ValueError(f"current not conserved along wire path {lab!r}")
        for name, val in (("starts", starts), ("ends", ends), ("currents", currents)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        uf = np.array(self.uniform_field, dtype=float).reshape(3)
        uf.setflags(write=False)
        object.__setattr__(self, "uniform_field", uf)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_segments(cls, segments: Sequence[WireSegment], labels=(), uniform_field=(0, 0, 0),
                      core_radius=DEFAULT_CORE_RADIUS):
        if segments:
            starts = np.array([s.start for s in segments])
            ends = np.array([s.end for s in segments])
            currents = np.array([s.current for s in segments])
        else:
            starts = ends = np.zeros((0, 3))
            currents = np.zeros(0)
        return cls(starts, ends, currents, tuple(labels), np.asarray(uniform_field, float), core_radius)

    @property
    def segments(self):
        return [WireSegment(s, e, i) for s, e, i in zip(self.starts, self.ends, self.currents)]

    def scaled(self, factor: float) -> "WireLayout":
        """Same geometry with every current multiplied by ``factor``."""
        return WireLayout(self.starts, self.ends, self.currents * factor, self.labels,
                          self.uniform_field, self.core_radius)

    def with_uniform_field(self, B) -> "WireLayout":
        return WireLayout(self.starts, self.ends, self.currents, self.labels, np.asarray(B, float),
                          self.core_radius)

    def __add__(self, other: "WireLayout") -> "WireLayout":
        return WireLayout(
            np.vstack([self.starts, other.starts]),
            np.vstack([self.ends, other.ends]),
            np.concatenate([self.currents, other.currents]),
            self.labels + other.labels,
            self.uniform_field + other.uniform_field,
            min(self.core_radius, other.core_radius),
        )


def _segment_fields(starts, ends, currents, points, core_radius, chunk=2_000_000):
    """Sum of finite-segment fields at ``points`` (N, 3)."""
    points = np.asarray(points, dtype=float)
    out = np.zeros_like(points)
    nseg = len(currents)
    if nseg == 0:
        return out
    pref = C.MU_0 / (4 * np.pi)
    step = max(1, chunk // max(nseg, 1))
    seg = ends - starts
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    for lo in range(0, len(points), step):
        p = points[lo:lo + step, None, :]
        r1 = p - starts[None]
        r2 = p - ends[None]
        n1 = np.sqrt(np.einsum("nsk,nsk->ns", r1, r1))
        n2 = np.sqrt(np.einsum("nsk,nsk->ns", r2, r2))
        dot = np.einsum("nsk,nsk->ns", r1, r2)
        # distance from the point to the segment itself
        tpar = np.clip(np.einsum("nsk,sk->ns", r1, seg) / seg_len2, 0.0, 1.0)
        closest = r1 - tpar[..., None] * seg[None]
        dist = np.sqrt(np.einsum("nsk,nsk->ns", closest, closest))
        if np.any(dist < core_radius):
            bad = np.argwhere(dist < core_radius)[0]
            raise PointInsideCoreError(
                f"point {points[lo + bad[0]]} lies {dist[tuple(bad)]:.3g} m from segment {bad[1]}, "
                f"inside core radius {core_radius:.3g} m")
        cross = np.cross(r1, r2)
        factor = pref * currents[None] * (n1 + n2) / (n1 * n2 * (n1 * n2 + dot))
        out[lo:lo + step] = np.einsum("ns,nsk->nk", factor, cross)
    return out


def biot_savart_segment(seg: WireSegment, p, core_radius: float = DEFAULT_CORE_RADIUS) -> FieldVector:
    """Exact field of a finite straight filament at point ``p``."""
    B = _segment_fields(seg.start[None], seg.end[None], np.array([seg.current]),
                        np.asarray(p, float).reshape(1, 3), core_radius)[0]
    return FieldVector(B)


def field_at(layout: WireLayout, points) -> np.ndarray:
    """Total field at one point (3,) or many (..., 3)."""
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 3)
    B = _segment_fields(layout.starts, layout.ends, layout.currents, flat, layout.core_radius)
    B += layout.uniform_field
    return B.reshape(pts.shape)


def field_gradient(layout: WireLayout, p, step: float = 1e-8) -> np.ndarray:
    """Central-difference gradient tensor, ``G[i, j] = dB_i/dx_j``."""
    p = np.asarray(p, dtype=float)
    offsets = np.vstack([np.eye(3) * step, -np.eye(3) * step])
    B = field_at(layout, p + offsets)
    return ((B[:3] - B[3:]) / (2 * step)).T


def evaluate(layout: WireLayout, p, gradient_step: Optional[float] = None) -> FieldVector:
    B = field_at(layout, p)
    G = field_gradient(layout, p, gradient_step) if gradient_step else None
    return FieldVector(B, G)


def _z_wire(x, y, length, current, label):
    return (np.array([x, y, -length / 2]), np.array([x, y, length / 2]), current, label)


def build_five_wire_layout(d: float = 2.5e-6, wire_len: float = 2e-3, I_c: float = 13e-3,
                           I_b: float = 15e-3, outer_offset: float = DEFAULT_OUTER_OFFSET,
                           width: float = WIRE_WIDTH) -> WireLayout:
    """Five parallel z-directed wires at y = 0.

    ``d`` is the edge-to-edge gap between the central wire and its neighbours,
    so the inner pair is centred at x = +-(d + width).  The central wire carries
    ``I_c``, the inner pair ``-I_b`` and the outer pair (centred at
    +-``outer_offset``) ``+I_b``.  Flip the sign of both currents for the
    opposite polarity.
    """
    if d <= 0 or wire_len <= 0 or width < 0 or outer_offset <= d + width:
        raise ValueError("invalid five-wire geometry")
    x_in = d + width
    wires = [
        _z_wire(0.0, 0.0, wire_len, I_c, "central"),
        _z_wire(-x_in, 0.0, wire_len, -I_b, "outer-pair-1"),
        _z_wire(x_in, 0.0, wire_len, -I_b, "outer-pair-1"),
        _z_wire(-outer_offset, 0.0, wire_len, I_b, "outer-pair-2"),
        _z_wire(outer_offset, 0.0, wire_len, I_b, "outer-pair-2"),
    ]
    starts, ends, cur, labels = zip(*wires)
    return WireLayout(np.array(starts), np.array(ends), np.array(cur), labels)


def build_h_wire_layout(I_z1: float = 0.4, I_z2: float = 0.4,
                        leg_separation: float = DEFAULT_H_LEG_SEPARATION,
                        depth: float = DEFAULT_H_DEPTH,
                        leg_length: float = DEFAULT_H_LEG_LENGTH,
                        y_guide: float = 7e-6) -> WireLayout:
    """Two x-directed legs at z = -+leg_separation/2, a distance ``depth`` below
    the guide line (at height ``y_guide``).  The central bar of the H carries no
    current and is omitted."""
    if leg_separation <= 0 or depth <= 0 or leg_length <= 0:
        raise ValueError("invalid H geometry")
    y = y_guide - depth
    half = leg_length / 2
    zs = (-leg_separation / 2, leg_separation / 2)
    starts = np.array([[-half, y, zs[0]], [-half, y, zs[1]]])
    ends = np.array([[half, y, zs[0]], [half, y, zs[1]]])
    return WireLayout(starts, ends, np.array([I_z1, I_z2]), ("H-leg-1", "H-leg-2"))


def find_zero_line(layout: WireLayout, z: float = 0.0, guess=(0.0, 7e-6), max_iter: int = 100,
                   tol: float = 1e-12, fd_step: Optional[float] = None) -> tuple:
    """Locate (x0, y0) where the transverse field vanishes in the plane ``z``.

    Damped Newton iteration on (B_x, B_y) with a central-difference Jacobian.
    A step that increases |B_perp| is halved until it does not.
    """
    x = np.array(guess, dtype=float)
    h = fd_step if fd_step is not None else 1e-2 * max(abs(x[1]), 1e-7)

    def bperp(xy):
        return field_at(layout, [xy[0], xy[1], z])[:2]

    f = bperp(x)
    for _ in range(max_iter):
        if np.hypot(*f) < tol:
            return float(x[0]), float(x[1])
        pts = np.array([[x[0] + h, x[1], z], [x[0] - h, x[1], z],
                        [x[0], x[1] + h, z], [x[0], x[1] - h, z]])
        B = field_at(layout, pts)[:, :2]
        J = np.column_stack([(B[0] - B[1]) / (2 * h), (B[2] - B[3]) / (2 * h)])
        try:
            dx = -np.linalg.solve(J, f)
        except np.linalg.LinAlgError as exc:
            raise NoConvergenceError("singular Jacobian while locating the field zero") from exc
        damping = 1.0
        for _ in range(60):
            trial = x + damping * dx
            f_trial = bperp(trial)
            if np.hypot(*f_trial) < np.hypot(*f) or np.hypot(*f_trial) < tol:
                break
            damping *= 0.5
        x, f = trial, f_trial
        # shrink the difference step as we close in on the zero
        h = min(h, max(10 * np.hypot(*dx), 1e-12))
    if np.hypot(*f) < tol:
        return float(x[0]), float(x[1])
    raise NoConvergenceError(
        f"no field zero found after {max_iter} iterations (|B_perp| = {np.hypot(*f):.3g} T)")


def transverse_gradient(layout: WireLayout, p, step: Optional[float] = None) -> float:
    """Quadrupole gradient magnitude sqrt|det J| of (B_x, B_y) w.r.t. (x, y)."""
    p = np.asarray(p, dtype=float)
    if p.shape == (2,):
        p = np.array([p[0], p[1], 0.0])
    h = step if step is not None else 1e-2 * abs(p[1])
    pts = p + np.array([[h, 0, 0], [-h, 0, 0], [0, h, 0], [0, -h, 0]])
    B = field_at(layout, pts)[:, :2]
    J = np.column_stack([(B[0] - B[1]) / (2 * h), (B[2] - B[3]) / (2 * h)])
    return float(np.sqrt(abs(np.linalg.det(J))))


def omega_perp(gradient: float, B_z: float) -> float:
    """Transverse angular frequency of a Ioffe-biased quadrupole guide."""
    return gradient * np.sqrt(C.MU / (C.M_RB87 * B_z))


def tune_outer_offset(height: float = 7e-6, **five_wire_kw) -> float:
    """Outer-pair offset that places the field zero at ``height`` above x = 0."""
    d = five_wire_kw.get("d", 2.5e-6)
    width = five_wire_kw.get("width", WIRE_WIDTH)

    def bx_at_height(off):
        lay = build_five_wire_layout(outer_offset=off, **five_wire_kw)
        return field_at(lay, [0.0, height, 0.0])[0]

    lo, hi = d + width + 0.5e-6, 4 * height
    return float(brentq(bx_at_height, lo, hi, xtol=1e-16, rtol=1e-14))


def h_wire_local_expansion(layout: WireLayout, center=(0.0, 7e-6, 0.0), step: float = 1e-5):
    """(B_z at centre, dB_y/dz, d^2 B_z/dz^2) of the H-wire field at ``center``."""
    c = np.asarray(center, float)
    dz = np.array([0, 0, step])
    B = field_at(layout, np.array([c - dz, c, c + dz]))
    return B[1, 2], (B[2, 1] - B[0, 1]) / (2 * step), (B[2, 2] - 2 * B[1, 2] + B[0, 2]) / step**2


def required_h_gradient(omega_dc: float, omega_ac: float, B_z: float) -> float:
    """Invert omega_ac^2 = omega_dc^2 + mu B'^2 / (m B_z) for B'."""
    return float(np.sqrt((omega_ac**2 - omega_dc**2) * C.M_RB87 * B_z / C.MU))


def tune_h_geometry(f_dc: float = 7.1, f_ac: float = 11.3, B_z0: float = 1.8e-4,
                    I: float = 0.4, leg_length: float = DEFAULT_H_LEG_LENGTH, y_guide: float = 7e-6):
    """Leg separation and depth reproducing both longitudinal frequencies.

    The DC curvature of B_z fixes f_dc; the uncompensated transverse gradient
    B'_H adds to it in the time-averaged trap and fixes f_ac.  B_z in the
    frequency shift is the total field at the trap centre (B_z0 plus the H part).
    """
    w_dc, w_ac = 2 * np.pi * f_dc, 2 * np.pi * f_ac
    curv_target = w_dc**2 * C.M_RB87 / C.MU

    def residual(params):
        sep, depth = np.exp(params)
        lay = build_h_wire_layout(I, I, sep, depth, leg_length, y_guide)
        Bc, gH, curv = h_wire_local_expansion(lay, (0.0, y_guide, 0.0))
        g_target = required_h_gradient(w_dc, w_ac, B_z0 + Bc)
        return [curv / curv_target - 1, abs(gH) / g_target - 1]

    sol = root(residual, np.log([DEFAULT_H_LEG_SEPARATION, DEFAULT_H_DEPTH]), tol=1e-12)
    if not sol.success:
        raise NoConvergenceError(f"H geometry tuning failed: {sol.message}")
    sep, depth = np.exp(sol.x)
    return float(sep), float(depth)
