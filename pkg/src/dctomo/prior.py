"""Prior image sources: volume files or a synthetic degradation oracle.

The oracle emulates the failure modes of a learned prior (blur, smooth
intensity bias, hallucinated and lost lesions) so the solver's robustness
claims can be tested without a trained network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import fileio
from .geometry import HuCalibration, ImageGrid, Volume, hu_to_mu
from .phantoms import Lesion

SOURCE_FILE = "file"
SOURCE_DEGRADED_ORACLE = "degraded_oracle"

_FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass
class DegradationSpec:
    blur_fwhm_mm: float = 0.0
    bias_amplitude_hu: float = 0.0
    fake_lesions: list[Lesion] = field(default_factory=list)
    removed_lesions: list[Lesion] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.blur_fwhm_mm < 0:
            raise ValueError("blur_fwhm_mm must be >= 0")


@dataclass
class PriorSource:
    kind: str
    path: str | None = None
    degradation: DegradationSpec | None = None

    def __post_init__(self):
        if self.kind == SOURCE_FILE:
            if not self.path or self.degradation is not None:
                raise ValueError("file prior needs a path and no degradation spec")
        elif self.kind == SOURCE_DEGRADED_ORACLE:
            if self.degradation is None or self.path:
                raise ValueError("degraded_oracle prior needs a degradation spec and no path")
        else:
            raise ValueError(f"unknown prior source kind {self.kind!r}")


def load_prior(
    src: PriorSource,
    grid: ImageGrid,
    truth: Volume | None = None,
    cal: HuCalibration = HuCalibration(),
) -> Volume:
    """Produce the prior volume on ``grid``, nonnegative and in 1/mm.

    File priors are resampled (trilinear) when their grid differs from the
    target; the oracle kind degrades the supplied ground-truth volume.
    """
    if src.kind == SOURCE_FILE:
        vol = fileio.load_volume(src.path, cal=cal)
        vol = resample_to_grid(vol, grid)
    else:
        if truth is None:
            raise ValueError("degraded_oracle prior requires the ground-truth volume")
        vol = degrade(truth, src.degradation, cal=cal)
        vol = resample_to_grid(vol, grid)
    vol.values = np.maximum(vol.values, 0.0)
    return vol


def resample_to_grid(vol: Volume, grid: ImageGrid) -> Volume:
    """Trilinear resampling onto ``grid``; identity when grids already match."""
    if vol.grid == grid:
        return vol
    src = vol.grid
    coords = []
    for axis, size in [(2, grid.dims[2]), (1, grid.dims[1]), (0, grid.dims[0])]:
        world = grid.origin_mm[axis] + grid.spacing_mm[axis] * np.arange(grid.dims[axis])
        coords.append((world - src.origin_mm[axis]) / src.spacing_mm[axis])
    cz, cy, cx = np.meshgrid(coords[0], coords[1], coords[2], indexing="ij")
    values = ndimage.map_coordinates(
        np.asarray(vol.values, dtype=np.float64), [cz, cy, cx], order=1, mode="nearest"
    )
    return Volume(grid, values)


def _bias_field(grid: ImageGrid, amplitude_mu: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth low-frequency field with max |value| equal to ``amplitude_mu``."""
    nz, ny, nx = grid.shape
    fy = rng.uniform(0.5, 1.5)
    fx = rng.uniform(0.5, 1.5)
    py = rng.uniform(0.0, 2.0 * np.pi)
    px = rng.uniform(0.0, 2.0 * np.pi)
    yy = np.linspace(0.0, 1.0, ny)[:, None]
    xx = np.linspace(0.0, 1.0, nx)[None, :]
    field = np.sin(2.0 * np.pi * fy * yy + py) * np.sin(2.0 * np.pi * fx * xx + px)
    peak = np.max(np.abs(field))
    if peak > 0:
        field = field / peak * amplitude_mu
    return np.broadcast_to(field, (nz, ny, nx)).copy()


def degrade(
    truth: Volume, spec: DegradationSpec, cal: HuCalibration = HuCalibration()
) -> Volume:
    """Blur + bias + fake lesions - removed lesions; deterministic given the seed."""
    grid = truth.grid
    values = np.asarray(truth.values, dtype=np.float64).copy()
    rng = np.random.Generator(np.random.PCG64(spec.seed))

    if spec.blur_fwhm_mm > 0:
        sigma_vox = [
            spec.blur_fwhm_mm * _FWHM_TO_SIGMA / grid.spacing_mm[axis] for axis in (2, 1, 0)
        ]
        if grid.dims[2] == 1:
            sigma_vox[0] = 0.0
        values = ndimage.gaussian_filter(values, sigma=sigma_vox)

    if spec.bias_amplitude_hu != 0:
        amplitude_mu = abs(spec.bias_amplitude_hu) * cal.mu_water_per_mm / 1000.0
        values += _bias_field(grid, amplitude_mu, rng)

    for lesion in spec.fake_lesions:
        region = _lesion_region(lesion, grid)
        delta = float(hu_to_mu(lesion.contrast_hu, cal)) - cal.mu_water_per_mm
        values[region] += delta

    for lesion in spec.removed_lesions:
        region = _lesion_region(lesion, grid)
        annulus = _lesion_region(lesion, grid, scale=2.0) & ~region
        if not annulus.any():
            raise ValueError(f"removed lesion at {lesion.center_mm}: empty surrounding annulus")
        values[region] = np.median(values[annulus])

    return Volume(grid, values)


def _lesion_region(lesion: Lesion, grid: ImageGrid, scale: float = 1.0) -> np.ndarray:
    X, Y = grid.xy_mesh()
    z = grid.axis_coords(2)
    cx, cy, cz = lesion.center_mm
    r = lesion.radius_mm * scale
    d2 = (X - cx) ** 2 + (Y - cy) ** 2
    if grid.dims[2] > 1:
        d2 = d2[None, :, :] + ((z - cz) ** 2)[:, None, None]
    else:
        d2 = d2[None, :, :]
    region = d2 <= r * r
    if scale == 1.0 and not region.any():
        raise ValueError(f"lesion at {lesion.center_mm} lies outside the grid")
    return region
