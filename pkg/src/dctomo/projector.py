"""Ray-driven forward projector and voxel-driven backprojectors.

The forward model samples each source->detector-pixel ray at equidistant
points (default rate 7.5/mm) and accumulates bilinearly (trilinearly in 3D)
interpolated attenuation times the step length.  Interpolation uses tent
weights with zero contribution outside the voxel-center hull, and rays are
clipped to the hull of the tent supports so edge voxels keep their full
footprint.  The voxel-driven backprojector weights the detector lookup by the
local ray density so that it approximates the transpose of the forward
operator up to discretization.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .geometry import ImageGrid, MeasurementMask, ScanGeometry, Sinogram, Volume

DEFAULT_SAMPLING_PER_MM = 7.5

# Backprojection weight modes (see _voxel_backproject)
_BP_PLAIN = 0
_BP_ADJOINT = 1
_BP_FBP = 2


def _grid_params(grid: ImageGrid):
    nx, ny, nz = grid.dims
    sx, sy, sz = grid.spacing_mm
    ox, oy, oz = grid.origin_mm
    return nx, ny, nz, sx, sy, sz, ox, oy, oz


def _geom_params(geom: ScanGeometry):
    du, dv = geom.pixel_size_mm
    return (
        geom.source_to_isocenter_mm,
        geom.source_to_detector_mm,
        geom.detector_rows,
        geom.detector_cols,
        du,
        dv,
    )


@njit(cache=True, fastmath=True, parallel=True)
def _forward_2d(img, nx, ny, sx, sy, ox, oy, angles, sid, sdd, ncols, du, step, out):
    # img is the single z-slice (ny, nx); out has shape (n_views, ncols)
    nv = angles.shape[0]
    for idx in prange(nv * ncols):
        iv = idx // ncols
        ic = idx % ncols
        cb = math.cos(angles[iv])
        sb = math.sin(angles[iv])
        srcx = sid * cb
        srcy = sid * sb
        u = (ic - (ncols - 1) * 0.5) * du
        detx = -(sdd - sid) * cb - u * sb
        dety = -(sdd - sid) * sb + u * cb
        dx = detx - srcx
        dy = dety - srcy
        length = math.sqrt(dx * dx + dy * dy)
        dx /= length
        dy /= length
        # clip to the hull of the interpolation supports, and to [source, detector]
        tmin = 0.0
        tmax = length
        lox = ox - sx
        hix = ox + nx * sx
        if abs(dx) > 1e-12:
            t1 = (lox - srcx) / dx
            t2 = (hix - srcx) / dx
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
        elif srcx < lox or srcx > hix:
            out[iv, ic] = 0.0
            continue
        loy = oy - sy
        hiy = oy + ny * sy
        if abs(dy) > 1e-12:
            t1 = (loy - srcy) / dy
            t2 = (hiy - srcy) / dy
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
        elif srcy < loy or srcy > hiy:
            out[iv, ic] = 0.0
            continue
        if tmax <= tmin:
            out[iv, ic] = 0.0
            continue
        n = int(math.ceil((tmax - tmin) / step))
        h = (tmax - tmin) / n
        acc = 0.0
        for k in range(n):
            t = tmin + (k + 0.5) * h
            gx = (srcx + t * dx - ox) / sx
            gy = (srcy + t * dy - oy) / sy
            ix0 = int(math.floor(gx))
            iy0 = int(math.floor(gy))
            fx = gx - ix0
            fy = gy - iy0
            v = 0.0
            if 0 <= iy0 < ny:
                if 0 <= ix0 < nx:
                    v += img[iy0, ix0] * (1.0 - fx) * (1.0 - fy)
                if 0 <= ix0 + 1 < nx:
                    v += img[iy0, ix0 + 1] * fx * (1.0 - fy)
            if 0 <= iy0 + 1 < ny:
                if 0 <= ix0 < nx:
                    v += img[iy0 + 1, ix0] * (1.0 - fx) * fy
                if 0 <= ix0 + 1 < nx:
                    v += img[iy0 + 1, ix0 + 1] * fx * fy
            acc += v
        out[iv, ic] = acc * h


@njit(cache=True, fastmath=True, parallel=True)
def _forward_3d(
    vol, nx, ny, nz, sx, sy, sz, ox, oy, oz, angles, sid, sdd, nrows, ncols, du, dv, step, out
):
    # vol has shape (nz, ny, nx); out has shape (n_views, nrows, ncols)
    nv = angles.shape[0]
    nray = nrows * ncols
    for idx in prange(nv * nray):
        iv = idx // nray
        ir = (idx % nray) // ncols
        ic = idx % ncols
        cb = math.cos(angles[iv])
        sb = math.sin(angles[iv])
        srcx = sid * cb
        srcy = sid * sb
        srcz = 0.0
        u = (ic - (ncols - 1) * 0.5) * du
        v = (ir - (nrows - 1) * 0.5) * dv
        detx = -(sdd - sid) * cb - u * sb
        dety = -(sdd - sid) * sb + u * cb
        detz = v
        dx = detx - srcx
        dy = dety - srcy
        dz = detz - srcz
        length = math.sqrt(dx * dx + dy * dy + dz * dz)
        dx /= length
        dy /= length
        dz /= length
        tmin = 0.0
        tmax = length
        miss = False
        for ax in range(3):
            if ax == 0:
                p0, d, lo, hi = srcx, dx, ox - sx, ox + nx * sx
            elif ax == 1:
                p0, d, lo, hi = srcy, dy, oy - sy, oy + ny * sy
            else:
                p0, d, lo, hi = srcz, dz, oz - sz, oz + nz * sz
            if abs(d) > 1e-12:
                t1 = (lo - p0) / d
                t2 = (hi - p0) / d
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
            elif p0 < lo or p0 > hi:
                miss = True
        if miss or tmax <= tmin:
            out[iv, ir, ic] = 0.0
            continue
        n = int(math.ceil((tmax - tmin) / step))
        h = (tmax - tmin) / n
        acc = 0.0
        for k in range(n):
            t = tmin + (k + 0.5) * h
            gx = (srcx + t * dx - ox) / sx
            gy = (srcy + t * dy - oy) / sy
            gz = (srcz + t * dz - oz) / sz
            ix0 = int(math.floor(gx))
            iy0 = int(math.floor(gy))
            iz0 = int(math.floor(gz))
            fx = gx - ix0
            fy = gy - iy0
            fz = gz - iz0
            val = 0.0
            for cz in range(2):
                izc = iz0 + cz
                if izc < 0 or izc >= nz:
                    continue
                wz = fz if cz == 1 else 1.0 - fz
                for cy in range(2):
                    iyc = iy0 + cy
                    if iyc < 0 or iyc >= ny:
                        continue
                    wy = fy if cy == 1 else 1.0 - fy
                    for cx in range(2):
                        ixc = ix0 + cx
                        if ixc < 0 or ixc >= nx:
                            continue
                        wx = fx if cx == 1 else 1.0 - fx
                        val += vol[izc, iyc, ixc] * wx * wy * wz
            acc += val
        out[iv, ir, ic] = acc * h


@njit(cache=True, fastmath=True, parallel=True)
def _backproject_2d(sino, nx, ny, sx, sy, ox, oy, angles, sid, sdd, ncols, du, mode, out):
    # sino has shape (n_views, ncols); out has shape (ny, nx)
    nv = angles.shape[0]
    for iy in prange(ny):
        y = oy + iy * sy
        for ix in range(nx):
            x = ox + ix * sx
            acc = 0.0
            for iv in range(nv):
                cb = math.cos(angles[iv])
                sb = math.sin(angles[iv])
                leff = sid - (x * cb + y * sb)
                if leff <= 1e-9:
                    continue
                u = (y * cb - x * sb) * sdd / leff
                cc = u / du + (ncols - 1) * 0.5
                c0 = int(math.floor(cc))
                fc = cc - c0
                val = 0.0
                if 0 <= c0 < ncols:
                    val += sino[iv, c0] * (1.0 - fc)
                if 0 <= c0 + 1 < ncols:
                    val += sino[iv, c0 + 1] * fc
                if mode == 1:
                    val *= sx * sy * sdd / (du * leff)
                elif mode == 2:
                    val *= sid * sid / (leff * leff)
                acc += val
            out[iy, ix] = acc


@njit(cache=True, fastmath=True, parallel=True)
def _backproject_3d(
    sino, nx, ny, nz, sx, sy, sz, ox, oy, oz, angles, sid, sdd, nrows, ncols, du, dv, mode, out
):
    # sino has shape (n_views, nrows, ncols); out has shape (nz, ny, nx)
    nv = angles.shape[0]
    for iz in prange(nz):
        z = oz + iz * sz
        for iy in range(ny):
            y = oy + iy * sy
            for ix in range(nx):
                x = ox + ix * sx
                acc = 0.0
                for iv in range(nv):
                    cb = math.cos(angles[iv])
                    sb = math.sin(angles[iv])
                    leff = sid - (x * cb + y * sb)
                    if leff <= 1e-9:
                        continue
                    mag = sdd / leff
                    cc = (y * cb - x * sb) * mag / du + (ncols - 1) * 0.5
                    rr = z * mag / dv + (nrows - 1) * 0.5
                    c0 = int(math.floor(cc))
                    r0 = int(math.floor(rr))
                    fc = cc - c0
                    fr = rr - r0
                    val = 0.0
                    for cr in range(2):
                        irc = r0 + cr
                        if irc < 0 or irc >= nrows:
                            continue
                        wr = fr if cr == 1 else 1.0 - fr
                        for ccol in range(2):
                            icc = c0 + ccol
                            if icc < 0 or icc >= ncols:
                                continue
                            wc = fc if ccol == 1 else 1.0 - fc
                            val += sino[iv, irc, icc] * wr * wc
                    if mode == 1:
                        val *= sx * sy * sz * sdd * sdd / (du * dv * leff * leff)
                    elif mode == 2:
                        val *= sid * sid / (leff * leff)
                    acc += val
                out[iz, iy, ix] = acc


@njit(cache=True, fastmath=True, parallel=True)
def _sart_view_update_2d(img, dp, angle, nx, ny, sx, sy, ox, oy, sid, sdd, ncols, du, relax):
    # In-place relaxed update of img (ny, nx) from one view's normalized residual dp (ncols,).
    cb = math.cos(angle)
    sb = math.sin(angle)
    for iy in prange(ny):
        y = oy + iy * sy
        for ix in range(nx):
            x = ox + ix * sx
            leff = sid - (x * cb + y * sb)
            if leff <= 1e-9:
                continue
            u = (y * cb - x * sb) * sdd / leff
            cc = u / du + (ncols - 1) * 0.5
            c0 = int(math.floor(cc))
            fc = cc - c0
            num = 0.0
            den = 0.0
            if 0 <= c0 < ncols:
                num += dp[c0] * (1.0 - fc)
                den += 1.0 - fc
            if 0 <= c0 + 1 < ncols:
                num += dp[c0 + 1] * fc
                den += fc
            if den > 0.0:
                img[iy, ix] += relax * num / den


@njit(cache=True, fastmath=True, parallel=True)
def _sart_view_update_3d(
    img, dp, angle, nx, ny, nz, sx, sy, sz, ox, oy, oz, sid, sdd, nrows, ncols, du, dv, relax
):
    # In-place relaxed update of img (nz, ny, nx) from one view's residual dp (nrows, ncols).
    cb = math.cos(angle)
    sb = math.sin(angle)
    for iz in prange(nz):
        z = oz + iz * sz
        for iy in range(ny):
            y = oy + iy * sy
            for ix in range(nx):
                x = ox + ix * sx
                leff = sid - (x * cb + y * sb)
                if leff <= 1e-9:
                    continue
                mag = sdd / leff
                cc = (y * cb - x * sb) * mag / du + (ncols - 1) * 0.5
                rr = z * mag / dv + (nrows - 1) * 0.5
                c0 = int(math.floor(cc))
                r0 = int(math.floor(rr))
                fc = cc - c0
                fr = rr - r0
                num = 0.0
                den = 0.0
                for cr in range(2):
                    irc = r0 + cr
                    if irc < 0 or irc >= nrows:
                        continue
                    wr = fr if cr == 1 else 1.0 - fr
                    for ccol in range(2):
                        icc = c0 + ccol
                        if icc < 0 or icc >= ncols:
                            continue
                        w = wr * (fc if ccol == 1 else 1.0 - fc)
                        num += dp[irc, icc] * w
                        den += w
                if den > 0.0:
                    img[iz, iy, ix] += relax * num / den


def forward_project(
    vol: Volume, geom: ScanGeometry, sampling_per_mm: float = DEFAULT_SAMPLING_PER_MM
) -> Sinogram:
    """Ray-driven projection of ``vol`` onto every detector pixel of ``geom``.

    Each ray value approximates the line integral of the interpolated
    attenuation between source and detector pixel; rays missing the grid give
    zero.  The returned mask is all-measured.
    """
    if sampling_per_mm <= 0:
        raise ValueError("sampling_per_mm must be > 0")
    if geom.n_views == 0:
        raise ValueError("geometry has an empty angle list")
    values = project_values(np.asarray(vol.values, dtype=np.float64), vol.grid, geom, sampling_per_mm)
    shape = values.shape
    return Sinogram(geom, values, MeasurementMask.all_measured(shape))


def project_values(
    values: np.ndarray,
    grid: ImageGrid,
    geom: ScanGeometry,
    sampling_per_mm: float = DEFAULT_SAMPLING_PER_MM,
    angles_rad: np.ndarray | None = None,
) -> np.ndarray:
    """Forward projection on bare arrays; ``angles_rad`` overrides the geometry's views."""
    nx, ny, nz, sx, sy, sz, ox, oy, oz = _grid_params(grid)
    sid, sdd, nrows, ncols, du, dv = _geom_params(geom)
    if angles_rad is None:
        angles_rad = geom.angles_rad
    angles_rad = np.ascontiguousarray(angles_rad, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    step = 1.0 / sampling_per_mm
    out = np.empty((angles_rad.size, nrows, ncols), dtype=np.float64)
    if nz == 1:
        out2 = out.reshape(angles_rad.size * nrows, ncols)
        _forward_2d(
            values[0], nx, ny, sx, sy, ox, oy,
            np.repeat(angles_rad, nrows), sid, sdd, ncols, du, step, out2,
        )
    else:
        _forward_3d(
            values, nx, ny, nz, sx, sy, sz, ox, oy, oz,
            angles_rad, sid, sdd, nrows, ncols, du, dv, step, out,
        )
    return out


def _voxel_backproject(
    sino_values: np.ndarray,
    geom: ScanGeometry,
    grid: ImageGrid,
    mode: int,
    angles_rad: np.ndarray | None = None,
) -> np.ndarray:
    nx, ny, nz, sx, sy, sz, ox, oy, oz = _grid_params(grid)
    sid, sdd, nrows, ncols, du, dv = _geom_params(geom)
    if angles_rad is None:
        angles_rad = geom.angles_rad
    angles_rad = np.ascontiguousarray(angles_rad, dtype=np.float64)
    sino_values = np.ascontiguousarray(sino_values, dtype=np.float64)
    out = np.empty((nz, ny, nx), dtype=np.float64)
    if nz == 1 and nrows == 1:
        _backproject_2d(
            sino_values[:, 0, :], nx, ny, sx, sy, ox, oy,
            angles_rad, sid, sdd, ncols, du, mode, out[0],
        )
    else:
        _backproject_3d(
            sino_values, nx, ny, nz, sx, sy, sz, ox, oy, oz,
            angles_rad, sid, sdd, nrows, ncols, du, dv, mode, out,
        )
    return out


def backproject(sino: Sinogram, grid: ImageGrid) -> Volume:
    """Transpose action of the forward projector (voxel-driven approximation).

    The detector lookup is weighted by voxel size over the local ray spacing,
    which makes ``<A x, y> ~= <x, backproject(y)>`` up to discretization.
    Normalization (SART-style) is left to the caller.
    """
    values = _voxel_backproject(sino.values, sino.geometry, grid, _BP_ADJOINT)
    if not np.any(values):
        # Distinguish "no rays intersect the grid" from a genuinely zero input.
        if np.any(sino.values):
            row_check = ray_row_sum(sino.geometry, grid)
            if not np.any(row_check.values):
                raise ValueError("no ray of this geometry intersects the grid")
    return Volume(grid, values)


def ray_row_sum(
    geom: ScanGeometry, grid: ImageGrid, sampling_per_mm: float = DEFAULT_SAMPLING_PER_MM
) -> Sinogram:
    """Per-ray sum of system-matrix entries, i.e. the projection of an all-ones volume."""
    ones = Volume.full(grid, 1.0, dtype=np.float64)
    return forward_project(ones, geom, sampling_per_mm)


def sart_view_update(
    img: np.ndarray,
    dp_norm: np.ndarray,
    view_index: int,
    geom: ScanGeometry,
    grid: ImageGrid,
    relaxation: float,
) -> None:
    """Apply one view's normalized residual to ``img`` in place (SART inner step)."""
    nx, ny, nz, sx, sy, sz, ox, oy, oz = _grid_params(grid)
    sid, sdd, nrows, ncols, du, dv = _geom_params(geom)
    angle = float(geom.angles_rad[view_index])
    if nz == 1 and nrows == 1:
        _sart_view_update_2d(
            img[0], np.ascontiguousarray(dp_norm[0], dtype=np.float64), angle,
            nx, ny, sx, sy, ox, oy, sid, sdd, ncols, du, relaxation,
        )
    else:
        _sart_view_update_3d(
            img, np.ascontiguousarray(dp_norm, dtype=np.float64), angle,
            nx, ny, nz, sx, sy, sz, ox, oy, oz, sid, sdd, nrows, ncols, du, dv, relaxation,
        )
