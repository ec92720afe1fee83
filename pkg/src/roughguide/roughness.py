"""Rough magnetic field from white-noise deformations of the central wire.

Two routes produce a realization of the rough field along the guide line:

* ``rough_field_direct`` builds the deformed wire as a polyline through the
  displaced centre line and sums Biot-Savart contributions (slow, first
  principles);
* ``rough_field_spectral`` shapes the Fourier transform of the same centre-line
  noise with a transfer function measured from the direct route (fast).

The arrays stored on a :class:`RoughRealization` are fields per ampere of
central-wire current.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import constants as C
from .magnetostatics import WIRE_WIDTH, _segment_fields
from .rng import stream

DEFAULT_HEIGHT = 7e-6
DEFAULT_REFERENCE_CURRENT = 13e-3


class DiscretizationError(ValueError):
    pass


class BandMismatchError(ValueError):
    pass


class ZeroRealizationError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeNoiseSpec:
    rms_amplitude: float = 1e-9
    dz: float = 0.5e-6
    z_extent: float = 2e-3
    seed: int = 0
    realization: int = 0
    noise_model: str = "white"

    def __post_init__(self):
        if self.dz <= 0:
            raise ValueError("dz must be positive")
        if self.z_extent < 100 * self.dz:
            raise ValueError("z_extent must span at least 100 grid steps")
        if self.rms_amplitude < 0:
            raise ValueError("rms_amplitude must be non-negative")
        if self.noise_model != "white":
            raise ValueError(f"unsupported noise model {self.noise_model!r}")

    @property
    def n(self) -> int:
        return int(round(self.z_extent / self.dz))

    @property
    def z_grid(self) -> np.ndarray:
        return (np.arange(self.n) - (self.n - 1) / 2) * self.dz


def generate_edge_profiles(spec: EdgeNoiseSpec):
    """Independent Gaussian border displacements (along x) for both wire edges."""
    left = stream(spec.seed, spec.realization, 0).standard_normal(spec.n) * spec.rms_amplitude
    right = stream(spec.seed, spec.realization, 1).standard_normal(spec.n) * spec.rms_amplitude
    return left, right


@dataclass(frozen=True)
class RoughRealization:
    z_grid: np.ndarray
    dBz: np.ndarray  # T per A of central-wire current
    dBx: np.ndarray
    dBy: np.ndarray
    height: float = DEFAULT_HEIGHT
    reference_current: float = DEFAULT_REFERENCE_CURRENT
    seed: Optional[int] = None
    provenance: str = "direct"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.z_grid)
        for name in ("dBz", "dBx", "dBy"):
            if len(getattr(self, name)) != n:
                raise ValueError("all field arrays must share the z grid")
        for name in ("z_grid", "dBz", "dBx", "dBy"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dz(self) -> float:
        return float(self.z_grid[1] - self.z_grid[0])

    def field(self, current: Optional[float] = None):
        """(dBx, dBy, dBz) along the grid at wire current ``current``."""
        I = self.reference_current if current is None else current
        return I * self.dBx, I * self.dBy, I * self.dBz

    def usable_window(self, fraction: float = 0.5):
        half = fraction * (self.z_grid[-1] - self.z_grid[0]) / 2
        mid = 0.5 * (self.z_grid[-1] + self.z_grid[0])
        return mid - half, mid + half

    def scaled(self, factor: float) -> "RoughRealization":
        meta = dict(self.meta)
        if "rms_amplitude" in meta:
            meta["rms_amplitude"] = meta["rms_amplitude"] * factor
        return replace(self, dBz=self.dBz * factor, dBx=self.dBx * factor, dBy=self.dBy * factor,
                       meta=meta)

    # -- columnar text --------------------------------------------------
    def header(self) -> dict:
        return {"height": self.height, "reference_current": self.reference_current,
                "seed": self.seed, "provenance": self.provenance, "meta": self.meta}

    def save(self, path, extra_header: Optional[dict] = None):
        path = Path(path)
        lines = [f"# realization: {json.dumps(self.header(), sort_keys=True)}"]
        for k, v in (extra_header or {}).items():
            lines.append(f"# {k}: {v}")
        lines.append("# columns: z_m delta_Bz_per_amp_T delta_Bx_per_amp_T delta_By_per_amp_T")
        body = "\n".join(
            " ".join(repr(float(v)) for v in row)
            for row in zip(self.z_grid, self.dBz, self.dBx, self.dBy))
        path.write_text("\n".join(lines) + "\n" + body + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RoughRealization":
        head = None
        rows = []
        for line in Path(path).read_text().splitlines():
            if line.startswith("# realization:"):
                head = json.loads(line.split(":", 1)[1])
            elif line and not line.startswith("#"):
                rows.append([float(v) for v in line.split()])
        if head is None:
            raise ValueError(f"{path}: missing realization header")
        data = np.array(rows)
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], head["height"],
                   head["reference_current"], head["seed"], head["provenance"], head["meta"])


def rough_field_direct(edges, edge_z, height: float = DEFAULT_HEIGHT, z_eval=None,
                       reference_current: float = DEFAULT_REFERENCE_CURRENT, x_guide: float = 0.0,
                       width: float = WIRE_WIDTH, seed=None, meta=None) -> RoughRealization:
    """Rough field of the deformed central wire, evaluated along the guide line.

    The current follows the centre line c(z) = (f_left + f_right)/2 as a
    polyline of short tilted segments; the field of the straight wire over the
    same span is subtracted.  ``edges`` are x-displacements of both borders
    sampled on the uniform grid ``edge_z``.
    """
    f_left, f_right = (np.asarray(e, dtype=float) for e in edges)
    edge_z = np.asarray(edge_z, dtype=float)
    if np.max(np.abs(np.concatenate([f_left, f_right])), initial=0.0) > 0.1 * width:
        raise ValueError("border deformations must be small compared to the wire width")
    z_eval = edge_z if z_eval is None else np.asarray(z_eval, dtype=float)
    dz_edge = edge_z[1] - edge_z[0]
    dz_eval = z_eval[1] - z_eval[0] if len(z_eval) > 1 else dz_edge
    if dz_edge > 4 * dz_eval:
        raise DiscretizationError(
            f"segment length {dz_edge:.3g} m exceeds 4 x evaluation step {dz_eval:.3g} m")
    centre = 0.5 * (f_left + f_right)
    # leads back onto the unperturbed axis one step beyond each end
    zs = np.concatenate([[edge_z[0] - dz_edge], edge_z, [edge_z[-1] + dz_edge]])
    xs = np.concatenate([[0.0], centre, [0.0]])
    verts = np.column_stack([xs, np.zeros_like(xs), zs])
    pts = np.column_stack([np.full_like(z_eval, x_guide), np.full_like(z_eval, height), z_eval])
    ones = np.ones(len(verts) - 1)
    # per ampere; the core check is irrelevant at the guide height
    B = _segment_fields(verts[:-1], verts[1:], ones, pts, 0.0)
    B -= _segment_fields(verts[:1], verts[-1:], np.ones(1), pts, 0.0)
    dBz = B[:, 2] - B[:, 2].mean()
    meta = dict(meta or {})
    meta.setdefault("rms_amplitude", float(np.sqrt(np.mean(np.concatenate([f_left, f_right]) ** 2))))
    meta.setdefault("dz_edge", float(dz_edge))
    return RoughRealization(z_eval, dBz, B[:, 0], B[:, 1], height, reference_current, seed,
                            "direct", meta)


@dataclass(frozen=True)
class TransferFunction:
    """Complex response of the rough field to a centre-line displacement
    a*exp(ikz), per metre of displacement and per ampere."""

    k_grid: np.ndarray
    Rz: np.ndarray
    Rx: np.ndarray
    Ry: np.ndarray
    height: float

    @property
    def response(self) -> np.ndarray:
        return np.abs(self.Rz)

    def interpolate(self, k: np.ndarray):
        """Complex (Rx, Ry, Rz) at wavevectors ``k`` >= 0 (linear in log k)."""
        k = np.asarray(k, dtype=float)
        out = []
        lk = np.log(self.k_grid)
        pos = k > 0
        for R in (self.Rx, self.Ry, self.Rz):
            v = np.zeros(k.shape, dtype=complex)
            lkk = np.log(k[pos])
            v[pos] = np.interp(lkk, lk, R.real) + 1j * np.interp(lkk, lk, R.imag)
            out.append(v)
        return tuple(out)


def compute_transfer_function(height: float = DEFAULT_HEIGHT, k_grid=None, amplitude: float = 5e-9,
                              points_per_period: int = 32, margin_heights: float = 60.0):
    """Measure the rough-field response at each wavevector with the direct route.

    For each k the centre line is displaced by a*sin(kz) over a span of
    +-(one period + ``margin_heights`` * height) and the field is projected onto
    sin/cos over one period around z = 0.
    """
    if k_grid is None:
        k_grid = np.geomspace(2 * np.pi / 5e-3, 2 * np.pi / 0.5e-6, 96)
    k_grid = np.asarray(k_grid, dtype=float)
    if np.any(k_grid <= 0):
        raise ValueError("k_grid must be positive")
    Rx, Ry, Rz = (np.zeros(len(k_grid), complex) for _ in range(3))
    for i, k in enumerate(k_grid):
        lam = 2 * np.pi / k
        dz = min(lam / points_per_period, height / 8)
        span = lam + margin_heights * height
        n = int(np.ceil(span / dz))
        z = np.arange(-n, n + 1) * dz
        # taper the sinusoid smoothly to zero over the outer quarter of the span
        taper = np.clip((span - np.abs(z)) / (0.25 * span), 0.0, 1.0)
        taper = 0.5 - 0.5 * np.cos(np.pi * taper)
        f = amplitude * np.sin(k * z) * taper
        z_eval = lam * (np.arange(points_per_period) / points_per_period - 0.5)
        real = rough_field_direct((f, f), z, height, z_eval=z_eval)
        s, c = np.sin(k * real.z_grid), np.cos(k * real.z_grid)
        scale = 2.0 / (points_per_period * amplitude)
        # dBz has had its mean removed; harmless, the sinusoid has zero mean over a period
        for R, arr in ((Rx, real.dBx), (Ry, real.dBy), (Rz, real.dBz)):
            R[i] = scale * (np.dot(arr, s) + 1j * np.dot(arr, c))
    return TransferFunction(k_grid, Rz, Rx, Ry, height)


def rough_field_spectral(spec: EdgeNoiseSpec, tf: TransferFunction,
                         reference_current: float = DEFAULT_REFERENCE_CURRENT) -> RoughRealization:
    """Fourier synthesis of the rough field from the edge-noise spectrum of ``spec``."""
    n, dz = spec.n, spec.dz
    k = 2 * np.pi * np.fft.rfftfreq(n, dz)
    k_fund, k_nyq = k[1], k[-1]
    if tf.k_grid[0] > k_fund * (1 + 1e-9) or tf.k_grid[-1] < k_nyq * (1 - 1e-9):
        raise BandMismatchError(
            f"transfer function covers [{tf.k_grid[0]:.3g}, {tf.k_grid[-1]:.3g}] rad/m, "
            f"synthesis needs [{k_fund:.3g}, {k_nyq:.3g}]")
    left, right = generate_edge_profiles(spec)
    centre_hat = np.fft.rfft(0.5 * (left + right))
    Rx, Ry, Rz = tf.interpolate(k)
    # a*exp(ikz) -> R*a*exp(ikz); numpy's forward transform uses exp(-ikz) so the
    # positive-frequency bins multiply R directly.  irfft enforces Hermitian symmetry.
    fields = []
    for R in (Rx, Ry, Rz):
        spec_hat = centre_hat * R
        spec_hat[0] = 0.0
        fields.append(np.fft.irfft(spec_hat, n))
    dBx, dBy, dBz = fields
    dBz = dBz - dBz.mean()
    meta = {"rms_amplitude": spec.rms_amplitude, "dz": dz, "z_extent": spec.z_extent,
            "realization": spec.realization, "noise_model": spec.noise_model}
    return RoughRealization(spec.z_grid, dBz, dBx, dBy, tf.height, reference_current, spec.seed,
                            "spectral", meta)


def parseval_rms(spec: EdgeNoiseSpec, tf: TransferFunction) -> float:
    """Expected rms of dBz (per ampere) over the ensemble of edge noise."""
    n = spec.n
    k = 2 * np.pi * np.fft.rfftfreq(n, spec.dz)
    Rz = tf.interpolate(k)[2]
    weight = np.full(len(k), 2.0)
    weight[0] = 0.0
    if n % 2 == 0:
        weight[-1] = 1.0
    var_centre = spec.rms_amplitude**2 / 2
    return float(np.sqrt(var_centre / n * np.sum(weight * np.abs(Rz) ** 2)))


def energy_rms(real: RoughRealization, current: float, window=None) -> float:
    """rms of mu_B * dBz over the window, in kelvin."""
    lo, hi = window if window is not None else real.usable_window()
    sel = (real.z_grid >= lo) & (real.z_grid <= hi)
    return float(C.MU_B * np.sqrt(np.mean((current * real.dBz[sel]) ** 2)) / C.K_B)


def calibrate_to_energy_rms(real: RoughRealization, target_rms: float,
                            current: float = DEFAULT_REFERENCE_CURRENT, window=None) -> RoughRealization:
    """Rescale so the potential roughness rms at ``current`` equals ``target_rms`` (K).

    The rms is taken over ``window`` (default: the usable inner half of the grid).
    """
    now = energy_rms(real, current, window)
    if now == 0.0:
        raise ZeroRealizationError("cannot calibrate an identically zero realization")
    out = real.scaled(target_rms / now)
    meta = dict(out.meta)
    meta["calibrated_rms_K"] = target_rms
    meta["calibration_current"] = current
    return replace(out, meta=meta)


@functools.lru_cache(maxsize=8)
def cached_transfer_function(height: float = DEFAULT_HEIGHT) -> TransferFunction:
    """compute_transfer_function with default sampling, memoized per height."""
    return compute_transfer_function(height)


def spectral_realization(seed: int, realization: int = 0, z_extent: float = 2e-3,
                         dz: float = 0.5e-6, height: float = DEFAULT_HEIGHT,
                         rms_amplitude: float = 1e-9) -> RoughRealization:
    spec = EdgeNoiseSpec(rms_amplitude, dz, z_extent, seed, realization)
    return rough_field_spectral(spec, cached_transfer_function(height))
