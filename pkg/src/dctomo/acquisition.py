"""Insufficient-data acquisition regimes and the Poisson noise model.

All three restrictors only edit the measurement mask and zero the unmeasured
values; the full (view, row, col) index space is retained so the unmeasured
part of the system matrix stays well defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RayState, Sinogram


@dataclass
class NoiseSpec:
    photons_i0: float = 1.0e5
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        if self.photons_i0 <= 0:
            raise ValueError("photons_i0 must be > 0")


def restrict_truncation(sino: Sinogram, kept_cols: int) -> Sinogram:
    """Keep only the centered ``kept_cols`` detector band; flag the rest unmeasured."""
    ncols = sino.geometry.detector_cols
    if not 0 < kept_cols <= ncols:
        raise ValueError(f"kept_cols must be in (0, {ncols}], got {kept_cols}")
    out = sino.copy()
    start = (ncols - kept_cols) // 2
    stop = start + kept_cols
    cut = np.ones(ncols, dtype=bool)
    cut[start:stop] = False
    out.mask.flags[:, :, cut] = RayState.UNMEASURED
    out.values[:, :, cut] = 0.0
    return out


def restrict_limited_angle(sino: Sinogram, range_deg: float) -> Sinogram:
    """Flag views with angle beyond ``angles[0] + range_deg`` as unmeasured."""
    angles = sino.geometry.angles_deg
    coverage = float(angles[-1] - angles[0])
    if not 0 < range_deg <= coverage + 1e-9:
        raise ValueError(f"range_deg must be in (0, {coverage}], got {range_deg}")
    out = sino.copy()
    cut = angles - angles[0] > range_deg + 1e-9
    out.mask.flags[cut] = RayState.UNMEASURED
    out.values[cut] = 0.0
    return out


def restrict_sparse_view(sino: Sinogram, stride: int) -> Sinogram:
    """Keep every ``stride``-th view starting with the first."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    out = sino.copy()
    cut = np.arange(sino.geometry.n_views) % stride != 0
    out.mask.flags[cut] = RayState.UNMEASURED
    out.values[cut] = 0.0
    return out


def add_poisson_noise(sino: Sinogram, noise: NoiseSpec) -> Sinogram:
    """Apply transmission Poisson noise to the measured rays.

    Counts are drawn as Poisson(I0 * exp(-p)) with a counter-based generator
    keyed on the seed, then mapped back through p' = -ln(max(count, 1) / I0).
    Unmeasured (and extrapolated) rays are untouched.
    """
    out = sino.copy()
    if not noise.enabled:
        return out
    measured = out.mask.measured
    p = np.asarray(out.values[measured], dtype=np.float64)
    if p.size and p.min() < 0:
        raise ValueError("negative line integrals on measured rays; upstream bug")
    rng = np.random.Generator(np.random.Philox(noise.seed))
    counts = rng.poisson(noise.photons_i0 * np.exp(-p))
    # clamp to one count so photon starvation cannot produce infinite integrals
    noisy = -np.log(np.maximum(counts, 1) / noise.photons_i0)
    out.values = out.values.astype(np.float64, copy=True)
    out.values[measured] = noisy
    out.values = out.values.astype(sino.values.dtype)
    return out
