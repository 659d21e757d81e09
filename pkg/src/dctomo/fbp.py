"""Filtered backprojection for the flat-detector circular trajectory.

Pipeline per view: cosine weighting -> row-wise ramp filtering in the
frequency domain (zero-padded to the next power of two) -> short-scan
redundancy weighting when enabled -> distance-weighted voxel-driven
backprojection.  Detector rows are filtered independently, so the same code
covers the fan-beam slice mode and the cone-beam (FDK-style) mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ImageGrid, MeasurementMask, RayState, ScanGeometry, Sinogram, Volume
from .projector import _BP_FBP, _voxel_backproject

RAM_LAK = "ram_lak"
SHEPP_LOGAN_WINDOW = "shepp_logan_window"

_FULL_SCAN_TOL_DEG = 1e-6


@dataclass
class FbpConfig:
    filter: str = RAM_LAK
    short_scan_weighting: bool = True
    # None derives the radius covered by the full detector from the geometry.
    fov_radius_mm: float | None = None

    def __post_init__(self):
        if self.filter not in (RAM_LAK, SHEPP_LOGAN_WINDOW):
            raise ValueError(f"unknown filter {self.filter!r}")
        if self.fov_radius_mm is not None and self.fov_radius_mm <= 0:
            raise ValueError("fov_radius_mm must be > 0")


def ramp_kernel_response(n_pad: int, du: float, window: str = RAM_LAK) -> np.ndarray:
    """Real frequency response of the discrete ramp filter (length n_pad//2+1).

    Built from the band-limited spatial kernel rather than |f| directly, which
    keeps the DC term correct and avoids a cupping bias.
    """
    h = np.zeros(n_pad, dtype=np.float64)
    h[0] = 1.0 / (4.0 * du * du)
    k = np.arange(1, n_pad // 2 + 1)
    odd = k[k % 2 == 1]
    h[odd] = -1.0 / (np.pi * odd * du) ** 2
    h[-odd] = h[odd]
    H = np.real(np.fft.rfft(h))
    if window == SHEPP_LOGAN_WINDOW:
        freq = np.fft.rfftfreq(n_pad, d=du)
        nyquist = 0.5 / du
        H = H * np.sinc(freq / (2.0 * nyquist))
    return H


def _next_pow2(n: int) -> int:
    return 1 << int(np.ceil(np.log2(max(n, 2))))


def filter_rows(values: np.ndarray, du: float, window: str = RAM_LAK) -> np.ndarray:
    """Apply the ramp filter along the last (column) axis of (views, rows, cols)."""
    ncols = values.shape[-1]
    n_pad = _next_pow2(2 * ncols)
    H = ramp_kernel_response(n_pad, du, window)
    spec = np.fft.rfft(values, n=n_pad, axis=-1)
    filtered = np.fft.irfft(spec * H, n=n_pad, axis=-1)[..., :ncols]
    return filtered * du


def parker_weight_function(beta_rel_rad, gamma_rad, gamma_m_rad: float) -> np.ndarray:
    """Smooth conjugate-ray partition weight at view offset beta and fan angle gamma.

    In this geometry the conjugate of ray (beta, gamma) is
    (beta + pi - 2*gamma, -gamma); for rays whose conjugate also lies inside
    the scan the two weights sum to one.
    """
    B = np.asarray(beta_rel_rad, dtype=np.float64)
    G = np.asarray(gamma_rad, dtype=np.float64)
    B, G = np.broadcast_arrays(B, G)
    eps = 1e-12
    w = np.ones_like(B)
    lo = B < 2.0 * (gamma_m_rad + G)
    arg = np.pi / 4.0 * B / np.maximum(gamma_m_rad + G, eps)
    w = np.where(lo, np.sin(arg) ** 2, w)
    hi = B > np.pi + 2.0 * G
    arg = np.pi / 4.0 * (np.pi + 2.0 * gamma_m_rad - B) / np.maximum(gamma_m_rad - G, eps)
    w = np.where(hi, np.sin(arg) ** 2, w)
    return np.clip(w, 0.0, 1.0)


def parker_weights(geom: ScanGeometry) -> np.ndarray:
    """Short-scan redundancy weights per (view, column).

    The half fan angle entering the weight is (coverage - 180 deg) / 2, i.e.
    the weights are fitted to the actual scan range.
    """
    coverage = np.deg2rad(geom.coverage_deg)
    gamma_m = (coverage - np.pi) / 2.0
    if gamma_m <= 0:
        raise ValueError("short-scan weighting needs coverage > 180 degrees")
    u = geom.detector_u_mm()
    gamma = np.arctan2(u, geom.source_to_detector_mm)  # signed fan angle per column
    beta = np.deg2rad(geom.angles_deg - geom.angles_deg[0])
    B, G = np.meshgrid(beta, gamma, indexing="ij")
    return parker_weight_function(B, G, gamma_m)


def fbp_reconstruct(sino: Sinogram, grid: ImageGrid, cfg: FbpConfig | None = None) -> Volume:
    """Analytic reconstruction; unmeasured rays enter as zeros.

    Views that are entirely unmeasured are dropped so the angular weighting
    reflects the views that actually carry data (sparse-view FBP keeps its
    intensity scale); zeroed rays within a view (truncation) stay.
    """
    cfg = cfg or FbpConfig()
    sino = drop_unmeasured_views(sino)
    geom = sino.geometry
    if geom.n_views < 2:
        raise ValueError("need at least two views for filtered backprojection")

    sid = geom.source_to_isocenter_mm
    sdd = geom.source_to_detector_mm
    u = geom.detector_u_mm()
    v = geom.detector_v_mm()
    cosw = sdd / np.sqrt(sdd**2 + u[None, :] ** 2 + v[:, None] ** 2)
    p = np.asarray(sino.values, dtype=np.float64) * cosw[None, :, :]

    full_scan = geom.coverage_deg >= 360.0 - _FULL_SCAN_TOL_DEG
    if cfg.short_scan_weighting and not full_scan and geom.coverage_deg > 180.0:
        p = p * parker_weights(geom)[:, None, :]

    q = filter_rows(p, geom.pixel_size_mm[0], cfg.filter)

    values = _voxel_backproject(q, geom, grid, _BP_FBP)
    scale = np.deg2rad(geom.angular_step_deg) * (sdd / sid)
    if full_scan:
        scale *= 0.5
    values *= scale

    radius = cfg.fov_radius_mm if cfg.fov_radius_mm is not None else geom.fov_radius_mm()
    X, Y = grid.xy_mesh()
    outside = (X**2 + Y**2) > radius**2
    values[:, outside] = 0.0
    return Volume(grid, values)


def drop_unmeasured_views(sino: Sinogram) -> Sinogram:
    """Remove views carrying no data at all; keeps per-ray masks of the rest."""
    has_data = sino.mask.has_value.any(axis=(1, 2))
    if has_data.all():
        return sino
    if not has_data.any():
        # keep the geometry usable; an all-zero sinogram reconstructs to zero
        has_data = np.ones_like(has_data)
        sino = sino.copy()
        sino.values[:] = 0.0
    geom = sino.geometry
    sub = ScanGeometry(
        source_to_detector_mm=geom.source_to_detector_mm,
        source_to_isocenter_mm=geom.source_to_isocenter_mm,
        detector_cols=geom.detector_cols,
        detector_rows=geom.detector_rows,
        pixel_size_mm=geom.pixel_size_mm,
        angles_deg=geom.angles_deg[has_data],
        mode=geom.mode,
    )
    return Sinogram(sub, sino.values[has_data], MeasurementMask(sino.mask.flags[has_data]))
