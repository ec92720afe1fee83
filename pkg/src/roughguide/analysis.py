"""Measurement chain: time of flight, pixel binning, resolution blur and
Maxwell-Boltzmann inversion of the linear density."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import constants as C
from .dynamics import Ensemble
from .potential import PotentialProfile
from .rng import stream

PIXEL = 6e-6
RESOLUTION_RMS = 8e-6
TOF = 1.5e-3
STREAM_IMAGING = 21


class ExtentError(ValueError):
    pass


class EmptyBinError(ValueError):
    pass


@dataclass(frozen=True)
class ResolutionModel:
    rms_width: float = RESOLUTION_RMS
    pixel: float = PIXEL
    tof: float = TOF
    # "folded": one Gaussian stands for tof blur and optics together;
    # "explicit": free flight for ``tof`` then the Gaussian (optics only)
    chain: str = "folded"

    def __post_init__(self):
        if self.rms_width < 0 or self.pixel <= 0 or self.tof < 0:
            raise ValueError("need rms_width >= 0, pixel > 0, tof >= 0")
        if self.chain not in ("folded", "explicit"):
            raise ValueError(f"unknown imaging chain {self.chain!r}")


@dataclass(frozen=True)
class DensityProfile:
    edges: np.ndarray
    counts: np.ndarray
    N: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.edges) != len(self.counts) + 1:
            raise ValueError("need len(edges) == len(counts) + 1")
        if np.any(np.asarray(self.counts) < -1e-9 * max(self.N, 1)):
            raise ValueError("negative counts")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def pixel(self) -> float:
        return float(self.edges[1] - self.edges[0])

    def save(self, path):
        lines = [f"# density: N={self.N!r} meta={self.meta}", "# columns: z_um atoms_per_pixel"]
        lines += [f"{float(z) * 1e6!r} {float(c)!r}" for z, c in zip(self.centers, self.counts)]
        Path(path).write_text("\n".join(lines) + "\n")
        return Path(path)


@dataclass(frozen=True)
class ExtractedPotential:
    z: np.ndarray
    V: np.ndarray  # J, NaN where masked
    sigma: np.ndarray  # J, Poisson error, NaN where masked
    mask: np.ndarray  # True where the bin was used
    temperature: float

    def profile(self) -> PotentialProfile:
        """Longest contiguous run of valid bins as a PotentialProfile."""
        best, start = (0, 0), None
        for i, m in enumerate(np.append(self.mask, False)):
            if m and start is None:
                start = i
            elif not m and start is not None:
                if i - start > best[1] - best[0]:
                    best = (start, i)
                start = None
        a, b = best
        return PotentialProfile(self.z[a:b], self.V[a:b], "measured",
                                {"temperature": self.temperature})


def tof_transform(ens: Ensemble, t_tof: float) -> Ensemble:
    """Free flight for ``t_tof`` seconds."""
    if t_tof < 0:
        raise ValueError("t_tof must be >= 0")
    return Ensemble(ens.position + ens.velocity * t_tof, ens.velocity.copy())


def _longitudinal(positions):
    p = np.asarray(positions.position if isinstance(positions, Ensemble) else positions, float)
    return p[:, 2] if p.ndim == 2 else p


def bin_density(positions, pixel: float = PIXEL, lo: Optional[float] = None,
                hi: Optional[float] = None) -> DensityProfile:
    """Histogram of longitudinal positions on pixel-aligned bins (edges at k * pixel)."""
    if pixel <= 0:
        raise ValueError("pixel must be positive")
    z = _longitudinal(positions)
    lo = np.floor(z.min() / pixel) * pixel if lo is None else lo
    hi = np.ceil(z.max() / pixel) * pixel if hi is None else hi
    n = max(1, int(round((hi - lo) / pixel)))
    edges = lo + pixel * np.arange(n + 1)
    # clip onto the outermost bins so the count is conserved
    idx = np.clip(np.floor((z - lo) / pixel).astype(int), 0, n - 1)
    counts = np.bincount(idx, minlength=n).astype(float)
    return DensityProfile(edges, counts, float(len(z)), {"pixel": pixel})


def gaussian_kernel(sigma: float, pixel: float, n_sigma: float = 6.0) -> np.ndarray:
    half = int(np.ceil(n_sigma * sigma / pixel))
    x = np.arange(-half, half + 1) * pixel
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def convolve_resolution(profile: DensityProfile, model: ResolutionModel = ResolutionModel(),
                        pad: bool = True) -> DensityProfile:
    """Discrete Gaussian blur.  With ``pad`` the grid grows by the kernel
    half-width on both sides so no atoms are lost at the edges."""
    sigma = model.rms_width
    if sigma == 0:
        return replace(profile, meta={**profile.meta, "resolution_rms": 0.0})
    extent = profile.edges[-1] - profile.edges[0]
    if extent < 6 * sigma:
        raise ExtentError(f"profile extent {extent:.3g} m is below 6 sigma = {6 * sigma:.3g} m")
    px = profile.pixel
    k = gaussian_kernel(sigma, px)
    half = (len(k) - 1) // 2
    if pad:
        out = np.convolve(profile.counts, k, mode="full")
        edges = np.concatenate([profile.edges[0] - px * np.arange(half, 0, -1), profile.edges,
                                profile.edges[-1] + px * np.arange(1, half + 1)])
    else:
        out = np.convolve(profile.counts, k, mode="same")
        edges = profile.edges
    return DensityProfile(edges, out, profile.N, {**profile.meta, "resolution_rms": sigma})


def image(ens: Ensemble, model: ResolutionModel = ResolutionModel(), lo=None, hi=None,
          pad: bool = True) -> DensityProfile:
    """tof (explicit chain only) -> bin -> blur."""
    if model.chain == "explicit":
        ens = tof_transform(ens, model.tof)
    prof = bin_density(ens, model.pixel, lo, hi)
    prof = convolve_resolution(prof, model, pad=pad)
    return replace(prof, meta={**prof.meta, "chain": model.chain,
                               "tof": model.tof if model.chain == "explicit" else 0.0})


def extract_potential(profile: DensityProfile, T: float, threshold: float = 10.0,
                      strict: bool = False) -> ExtractedPotential:
    """V = -k_B T ln(n / n0) with n0 the largest bin count.

    Bins with fewer than ``threshold`` counts are masked (never interpolated);
    with ``strict`` any such bin between valid bins raises EmptyBinError.
    """
    if T <= 0:
        raise ValueError("temperature must be positive")
    n = np.asarray(profile.counts, float)
    mask = n >= threshold
    if mask.sum() < 3:
        raise EmptyBinError(f"fewer than 3 bins reach the {threshold:g}-count threshold")
    if strict:
        first, last = np.argmax(mask), len(mask) - 1 - np.argmax(mask[::-1])
        if not np.all(mask[first:last + 1]):
            raise EmptyBinError("bins below threshold inside the cloud")
    kT = C.K_B * T
    n0 = n.max()
    V = np.full(n.shape, np.nan)
    sig = np.full(n.shape, np.nan)
    V[mask] = -kT * np.log(n[mask] / n0)
    sig[mask] = kT / np.sqrt(n[mask])
    return ExtractedPotential(profile.centers, V, sig, mask, T)


@dataclass(frozen=True)
class TemperatureResult:
    per_axis: tuple
    mean: float


def temperature_from_velocity(ens: Ensemble, axes=(0, 1), mass: float = C.M_RB87):
    """T = m var(v) / k_B on each transverse axis, and their mean."""
    v = np.asarray(ens.velocity, float)
    if len(v) < 100:
        raise ValueError("need at least 100 atoms for a temperature estimate")
    if v.ndim == 1:
        v = v[:, None]
        axes = (0,)
    per = tuple(float(mass * np.var(v[:, a]) / C.K_B) for a in axes)
    return TemperatureResult(per, float(np.mean(per)))


def roughness_statistics(residual, dz: float):
    """(rms in K, (spatial frequency in 1/m, periodogram in K^2 m)) of a residual in J."""
    r = np.asarray(residual, float) / C.K_B
    rms = float(np.sqrt(np.mean(r**2)))
    n = len(r)
    F = np.fft.rfft(r - r.mean())
    power = (np.abs(F) ** 2) * dz / n
    power[1:-1] *= 2
    return rms, (np.fft.rfftfreq(n, dz), power)


def pixel_average(z, values, pixel: float = PIXEL):
    """Average ``values`` (on uniform ``z``) over pixel-aligned bins fully
    covered by the grid.  Returns (bin centres, means)."""
    z = np.asarray(z, float)
    lo = np.ceil(z[0] / pixel - 1e-9) * pixel
    hi = np.floor(z[-1] / pixel + 1e-9) * pixel
    n = int(round((hi - lo) / pixel))
    idx = np.floor((z - lo) / pixel + 1e-9).astype(int)
    ok = (idx >= 0) & (idx < n)
    sums = np.bincount(idx[ok], weights=np.asarray(values)[ok], minlength=n)
    cnt = np.bincount(idx[ok], minlength=n)
    return lo + pixel * (np.arange(n) + 0.5), sums / np.maximum(cnt, 1)


def imaging_noise(n: int, rms: float, seed: int, key: int = 0, normalize: bool = True):
    """Gaussian per-pixel noise; with ``normalize`` the sample rms equals ``rms`` exactly."""
    x = stream(seed, STREAM_IMAGING, key).standard_normal(n)
    if normalize:
        x *= 1.0 / np.sqrt(np.mean(x**2))
    return rms * x
