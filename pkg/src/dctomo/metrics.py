"""Masked image-quality metrics in Hounsfield units, plus lesion probes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import HuCalibration, ImageGrid, Volume, mu_to_hu

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_DYNAMIC_RANGE_HU = 2000.0


@dataclass
class RegionMask:
    """Boolean voxel selection on an ImageGrid."""

    grid: ImageGrid
    values: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"mask shape {self.values.shape} does not match grid shape {self.grid.shape}"
            )

    @classmethod
    def full(cls, grid: ImageGrid) -> "RegionMask":
        return cls(grid, np.ones(grid.shape, dtype=bool), kind="custom")

    @classmethod
    def fov_disk(cls, grid: ImageGrid, radius_mm: float) -> "RegionMask":
        """Disk around the isocenter, replicated over all slices."""
        X, Y = grid.xy_mesh()
        disk = (X**2 + Y**2) <= radius_mm**2
        return cls(grid, np.broadcast_to(disk, grid.shape).copy(), kind="fov_disk")

    @classmethod
    def body(cls, truth: Volume, threshold_hu: float = -500.0,
             cal: HuCalibration = HuCalibration()) -> "RegionMask":
        """Support of the imaged object, thresholded on the reference volume."""
        hu = mu_to_hu(np.asarray(truth.values, dtype=np.float64), cal)
        return cls(truth.grid, hu > threshold_hu, kind="body")

    @classmethod
    def sphere(cls, grid: ImageGrid, center_mm, radius_mm: float) -> "RegionMask":
        X, Y = grid.xy_mesh()
        cx, cy, cz = center_mm
        d2 = (X - cx) ** 2 + (Y - cy) ** 2
        if grid.dims[2] > 1:
            z = grid.axis_coords(2)
            d2 = d2[None, :, :] + ((z - cz) ** 2)[:, None, None]
        else:
            d2 = d2[None, :, :]
        return cls(grid, d2 <= radius_mm**2, kind="lesion")

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.values))

    def __and__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.grid, self.values & other.values)

    def __invert__(self) -> "RegionMask":
        return RegionMask(self.grid, ~self.values)


def _check_pair(a: Volume, b: Volume, mask: RegionMask):
    if a.grid != b.grid or a.grid != mask.grid:
        raise ValueError("volumes and mask must share one grid")
    if mask.count == 0:
        raise ValueError("empty region mask")


def rmse(a: Volume, b: Volume, mask: RegionMask, cal: HuCalibration = HuCalibration()) -> float:
    """Root mean squared difference in HU over the masked voxels."""
    _check_pair(a, b, mask)
    diff = np.asarray(a.values, dtype=np.float64) - np.asarray(b.values, dtype=np.float64)
    diff_hu = diff * 1000.0 / cal.mu_water_per_mm
    return float(np.sqrt(np.mean(diff_hu[mask.values] ** 2)))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _local_mean(img2d: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return ndimage.correlate(img2d, kernel, mode="constant", cval=0.0)


def ssim(
    a: Volume,
    b: Volume,
    mask: RegionMask,
    cal: HuCalibration = HuCalibration(),
    dynamic_range_hu: float = SSIM_DYNAMIC_RANGE_HU,
) -> float:
    """Mean local SSIM over the masked voxels.

    Gaussian 11x11 window (sigma 1.5) applied slice-wise in HU with the
    standard stabilizers C1 = (0.01 L)^2, C2 = (0.03 L)^2.  Border voxels
    whose window leaves the slice are excluded from the average.
    """
    _check_pair(a, b, mask)
    kernel = _gaussian_window()
    half = SSIM_WINDOW // 2
    c1 = (0.01 * dynamic_range_hu) ** 2
    c2 = (0.03 * dynamic_range_hu) ** 2

    total = 0.0
    count = 0
    for iz in range(a.grid.dims[2]):
        x = mu_to_hu(np.asarray(a.values[iz], dtype=np.float64), cal)
        y = mu_to_hu(np.asarray(b.values[iz], dtype=np.float64), cal)
        mx = _local_mean(x, kernel)
        my = _local_mean(y, kernel)
        mxx = _local_mean(x * x, kernel)
        myy = _local_mean(y * y, kernel)
        mxy = _local_mean(x * y, kernel)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        valid = np.zeros_like(smap, dtype=bool)
        if smap.shape[0] > 2 * half and smap.shape[1] > 2 * half:
            valid[half:-half, half:-half] = True
        sel = valid & mask.values[iz]
        total += float(smap[sel].sum())
        count += int(np.count_nonzero(sel))
    if count == 0:
        raise ValueError("mask does not intersect the SSIM-valid interior")
    return total / count


def lesion_probe(img: Volume, ref: Volume, lesion: RegionMask,
                 cal: HuCalibration = HuCalibration()) -> dict:
    """Lesion-to-background contrast and its recovery fraction relative to ``ref``.

    The background is an annulus of one equivalent lesion radius around the
    lesion region; contrast is mean(lesion) - mean(annulus) in HU.
    """
    if lesion.count == 0:
        raise ValueError("empty lesion region")
    _check_pair(img, ref, lesion)
    spacing = lesion.grid.spacing_mm
    sampling = (spacing[2], spacing[1], spacing[0])
    dist = ndimage.distance_transform_edt(~lesion.values, sampling=sampling)
    if lesion.grid.dims[2] == 1:
        voxel_area = spacing[0] * spacing[1]
        r_eq = float(np.sqrt(lesion.count * voxel_area / np.pi))
    else:
        voxel_vol = spacing[0] * spacing[1] * spacing[2]
        r_eq = float((3.0 * lesion.count * voxel_vol / (4.0 * np.pi)) ** (1.0 / 3.0))
    annulus = (dist > 0) & (dist <= r_eq)
    if not annulus.any():
        raise ValueError("degenerate annulus around the lesion region")

    def contrast(vol: Volume) -> float:
        hu = mu_to_hu(np.asarray(vol.values, dtype=np.float64), cal)
        return float(hu[lesion.values].mean() - hu[annulus].mean())

    c_img = contrast(img)
    c_ref = contrast(ref)
    recovery = c_img / c_ref if c_ref != 0 else float("nan")
    return {"contrast_hu": c_img, "reference_contrast_hu": c_ref, "contrast_recovery_fraction": recovery}
