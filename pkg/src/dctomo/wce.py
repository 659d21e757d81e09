"""Water-cylinder extrapolation of laterally truncated projections.

Each detector row of each view is extended beyond the measured band by the
profile of a water cylinder fitted at the truncation boundary.  The fit is
done in the ray impact-parameter coordinate s (signed distance of the ray
from the isocenter), where the fan-beam projection of a centered water
cylinder is exactly p(s) = 2 mu_w sqrt(R^2 - (s - s0)^2).  Equivalently
p^2 + 4 mu_w^2 s^2 is linear in s, so the cylinder center follows from a
linear least-squares fit over the boundary columns -- no differentiation of
sampled data -- and the radius is anchored so the profile passes exactly
through the boundary sample.
"""

from __future__ import annotations

import numpy as np

from .geometry import HuCalibration, RayState, Sinogram

COSINE_TAIL_COLS = 50
FIT_COLS = 25


def fit_water_cylinder(
    p_window: np.ndarray,
    s_window: np.ndarray,
    boundary_p: float,
    boundary_s: float,
    mu_w: float,
) -> tuple[float, float]:
    """Fit (center s0, radius^2) of a water cylinder to a boundary window.

    The transform y = p^2 + 4 mu_w^2 s^2 = c + 8 mu_w^2 s0 * s is exact for
    water-cylinder projections, so both parameters follow from a linear
    regression on the boundary window; a boundary-anchored radius is the
    fallback when the window is too small to regress.
    """
    if p_window.size >= 2 and np.ptp(s_window) > 0:
        y = p_window**2 + 4.0 * mu_w**2 * s_window**2
        slope, intercept = np.polyfit(s_window, y, deg=1)
        s0 = float(slope / (8.0 * mu_w**2))
        r2 = float(intercept / (4.0 * mu_w**2) + s0**2)
        if np.isfinite(r2) and r2 > 0:
            return s0, r2
    else:
        s0 = float(boundary_s)
    r2 = (boundary_p / (2.0 * mu_w)) ** 2 + (boundary_s - s0) ** 2
    return s0, float(r2)


def cylinder_profile(s, s0: float, r2: float, mu_w: float) -> np.ndarray:
    """Projection profile of the fitted cylinder, clamped at zero where it ends."""
    return 2.0 * mu_w * np.sqrt(np.maximum(r2 - (np.asarray(s) - s0) ** 2, 0.0))


def _cosine_tail(n: int, value: float) -> np.ndarray:
    """Graceful roll-off to zero over COSINE_TAIL_COLS columns."""
    k = np.arange(1, n + 1, dtype=np.float64)
    w = 0.5 * (1.0 + np.cos(np.pi * np.minimum(k / COSINE_TAIL_COLS, 1.0)))
    return value * w


def wce_extrapolate(sino: Sinogram, cal: HuCalibration = HuCalibration()) -> Sinogram:
    """Fill truncated detector columns with fitted water-cylinder profiles.

    Measured columns are untouched; filled columns are flagged EXTRAPOLATED so
    they count as data for FBP but stay out of the measured set the solver
    constrains against.  Requires a contiguous measured band per row.
    """
    out = sino.copy()
    out.values = np.asarray(out.values, dtype=np.float64)
    geom = sino.geometry
    ncols = geom.detector_cols
    s = geom.impact_parameter_mm()
    mu_w = cal.mu_water_per_mm

    for iv in range(geom.n_views):
        for ir in range(geom.detector_rows):
            flags = out.mask.flags[iv, ir]
            measured_idx = np.flatnonzero(flags == RayState.MEASURED)
            if measured_idx.size == 0 or measured_idx.size == ncols:
                continue
            b0, b1 = measured_idx[0], measured_idx[-1]
            if measured_idx.size != b1 - b0 + 1:
                raise ValueError(
                    f"view {iv} row {ir}: measured band is not contiguous, cannot extrapolate"
                )
            row = out.values[iv, ir]
            if b0 > 0:
                row[:b0] = _extrapolate_side(row, s, b0, b1, left=True, mu_w=mu_w)
                flags[:b0] = np.where(
                    flags[:b0] == RayState.UNMEASURED, RayState.EXTRAPOLATED, flags[:b0]
                )
            if b1 < ncols - 1:
                row[b1 + 1 :] = _extrapolate_side(row, s, b0, b1, left=False, mu_w=mu_w)
                flags[b1 + 1 :] = np.where(
                    flags[b1 + 1 :] == RayState.UNMEASURED, RayState.EXTRAPOLATED, flags[b1 + 1 :]
                )
    out.values = out.values.astype(sino.values.dtype)
    return out


def _extrapolate_side(row, s, b0, b1, left: bool, mu_w: float) -> np.ndarray:
    if left:
        window = np.arange(b0, min(b0 + FIT_COLS, b1 + 1))
        target = s[:b0]
        boundary = b0
    else:
        window = np.arange(max(b1 - FIT_COLS + 1, b0), b1 + 1)
        target = s[b1 + 1 :]
        boundary = b1
    value = float(row[boundary])
    if value <= 0.0 or not np.isfinite(value):
        # negative or invalid boundary: clamp and extrapolate as zero
        return np.zeros(target.size, dtype=np.float64)
    p_win = row[window]
    s_win = s[window]
    s0, r2 = fit_water_cylinder(p_win, s_win, value, float(s[boundary]), mu_w)
    if not (np.isfinite(s0) and np.isfinite(r2) and r2 > 0):
        tail = _cosine_tail(target.size, value)
        return tail[::-1] if left else tail
    return cylinder_profile(target, s0, r2, mu_w)
