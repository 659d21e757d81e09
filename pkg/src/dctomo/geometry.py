"""Scan geometry, image grids, and the containers for volumes and projection data.

Conventions (also written into every sinogram file header):

* World coordinates are in mm with the rotation isocenter at the origin.
* At view angle ``beta`` (degrees, CCW from the +x axis) the source sits at
  ``SID * (cos b, sin b, 0)`` and the flat detector is centered at
  ``-(SDD - SID) * (cos b, sin b, 0)``.
* Detector axis u runs along columns with unit vector ``(-sin b, cos b, 0)``,
  axis v runs along rows with unit vector ``(0, 0, 1)``.  Rays pass through
  detector pixel centers; pixel (row r, col c) sits at
  ``u = (c - (cols - 1)/2) * du`` and ``v = (r - (rows - 1)/2) * dv``.
* Volume arrays are indexed ``[z, y, x]`` (x fastest), sinogram arrays are
  indexed ``[view, row, col]`` (col fastest).
* Attenuation is stored in 1/mm; Hounsfield units only at the I/O boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class RayState(enum.IntEnum):
    """Per-ray measurement state stored in a MeasurementMask."""

    UNMEASURED = 0
    MEASURED = 1
    # Filled by extrapolation: usable as data for FBP, still "unmeasured" for
    # the constrained solver.
    EXTRAPOLATED = 2


FAN_BEAM_2D = "fan_beam_2d"
CONE_BEAM_3D = "cone_beam_3d"


@dataclass
class ScanGeometry:
    """Circular-trajectory flat-detector acquisition description."""

    source_to_detector_mm: float
    source_to_isocenter_mm: float
    detector_cols: int
    detector_rows: int = 1
    pixel_size_mm: tuple[float, float] = (1.0, 1.0)  # (du, dv)
    angles_deg: np.ndarray = field(default_factory=lambda: np.arange(360.0))
    mode: str = FAN_BEAM_2D

    def __post_init__(self):
        self.angles_deg = np.asarray(self.angles_deg, dtype=np.float64)
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))

    def validate(self) -> list[str]:
        """Return a list of invariant violations (empty when valid)."""
        out = []
        if not (self.source_to_detector_mm > self.source_to_isocenter_mm > 0):
            out.append(
                "require source_to_detector_mm > source_to_isocenter_mm > 0, "
                f"got {self.source_to_detector_mm} and {self.source_to_isocenter_mm}"
            )
        if self.detector_cols < 1 or self.detector_rows < 1:
            out.append("detector must have at least one row and one column")
        if min(self.pixel_size_mm) <= 0:
            out.append("detector pixel size must be positive")
        if self.angles_deg.size == 0:
            out.append("angle list is empty")
        elif self.angles_deg.size > 1 and np.any(np.diff(self.angles_deg) <= 0):
            out.append("view angles must be strictly increasing")
        if self.mode not in (FAN_BEAM_2D, CONE_BEAM_3D):
            out.append(f"unknown mode {self.mode!r}")
        elif self.mode == FAN_BEAM_2D and self.detector_rows != 1:
            out.append("fan_beam_2d mode requires detector_rows == 1")
        return out

    @property
    def n_views(self) -> int:
        return int(self.angles_deg.size)

    @property
    def angles_rad(self) -> np.ndarray:
        return np.deg2rad(self.angles_deg)

    @property
    def angular_step_deg(self) -> float:
        if self.n_views < 2:
            return 0.0
        return float(np.mean(np.diff(self.angles_deg)))

    @property
    def coverage_deg(self) -> float:
        """Angular coverage including the trailing step."""
        return float(self.angles_deg[-1] - self.angles_deg[0]) + self.angular_step_deg

    @property
    def rays_per_view(self) -> int:
        return self.detector_rows * self.detector_cols

    def fan_half_angle_rad(self, cols: int | None = None) -> float:
        """Half fan angle subtended by the central ``cols`` detector columns."""
        if cols is None:
            cols = self.detector_cols
        half_width = 0.5 * cols * self.pixel_size_mm[0]
        return float(np.arctan2(half_width, self.source_to_detector_mm))

    def fov_radius_mm(self, cols: int | None = None) -> float:
        """Radius of the isocentered disk seen by the central ``cols`` columns at every view."""
        return self.source_to_isocenter_mm * float(np.sin(self.fan_half_angle_rad(cols)))

    def detector_u_mm(self) -> np.ndarray:
        """Signed u coordinate of every detector column center."""
        c = np.arange(self.detector_cols, dtype=np.float64)
        return (c - (self.detector_cols - 1) / 2.0) * self.pixel_size_mm[0]

    def detector_v_mm(self) -> np.ndarray:
        r = np.arange(self.detector_rows, dtype=np.float64)
        return (r - (self.detector_rows - 1) / 2.0) * self.pixel_size_mm[1]

    def impact_parameter_mm(self) -> np.ndarray:
        """Signed distance from the isocenter to each column's ray (any view)."""
        u = self.detector_u_mm()
        return self.source_to_isocenter_mm * u / np.hypot(self.source_to_detector_mm, u)


@dataclass
class ImageGrid:
    """Voxel lattice: counts, spacing, and the center of voxel (0, 0, 0)."""

    dims: tuple[int, int, int]  # (nx, ny, nz)
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        self.origin_mm = tuple(float(o) for o in self.origin_mm)
        if min(self.dims) < 1:
            raise ValueError(f"all dims must be >= 1, got {self.dims}")
        if min(self.spacing_mm) <= 0:
            raise ValueError(f"all spacings must be > 0, got {self.spacing_mm}")

    @classmethod
    def centered(cls, nx, ny, nz=1, spacing_mm=(1.0, 1.0, 1.0)) -> "ImageGrid":
        """Grid whose voxel lattice is centered on the isocenter."""
        sx, sy, sz = spacing_mm
        origin = (-(nx - 1) / 2.0 * sx, -(ny - 1) / 2.0 * sy, -(nz - 1) / 2.0 * sz)
        return cls(dims=(nx, ny, nz), spacing_mm=spacing_mm, origin_mm=origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape (nz, ny, nx)."""
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def axis_coords(self, axis: int) -> np.ndarray:
        """Voxel center coordinates along axis 0=x, 1=y, 2=z."""
        return self.origin_mm[axis] + self.spacing_mm[axis] * np.arange(self.dims[axis])

    def xy_mesh(self):
        """(X, Y) voxel-center meshgrids of shape (ny, nx)."""
        x = self.axis_coords(0)
        y = self.axis_coords(1)
        return np.meshgrid(x, y, indexing="xy")


@dataclass
class Volume:
    """Dense attenuation image on an ImageGrid, values in 1/mm."""

    grid: ImageGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("volume contains non-finite values")

    @classmethod
    def zeros(cls, grid: ImageGrid, dtype=np.float32) -> "Volume":
        return cls(grid, np.zeros(grid.shape, dtype=dtype))

    @classmethod
    def full(cls, grid: ImageGrid, value: float, dtype=np.float32) -> "Volume":
        return cls(grid, np.full(grid.shape, value, dtype=dtype))

    def copy(self) -> "Volume":
        return Volume(self.grid, self.values.copy())


@dataclass
class MeasurementMask:
    """Per-ray RayState flags over a sinogram's (view, row, col) index space."""

    flags: np.ndarray

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=np.uint8)

    @classmethod
    def all_measured(cls, shape) -> "MeasurementMask":
        return cls(np.full(shape, RayState.MEASURED, dtype=np.uint8))

    @property
    def measured(self) -> np.ndarray:
        """Boolean array: rays backed by actual measurements."""
        return self.flags == RayState.MEASURED

    @property
    def has_value(self) -> np.ndarray:
        """Boolean array: rays carrying usable data (measured or extrapolated)."""
        return self.flags != RayState.UNMEASURED

    @property
    def fraction_measured(self) -> float:
        return float(np.mean(self.measured))

    def copy(self) -> "MeasurementMask":
        return MeasurementMask(self.flags.copy())


@dataclass
class Sinogram:
    """Projection line integrals plus geometry and per-ray measurement state."""

    geometry: ScanGeometry
    values: np.ndarray
    mask: MeasurementMask

    def __post_init__(self):
        self.values = np.asarray(self.values)
        expected = (self.geometry.n_views, self.geometry.detector_rows, self.geometry.detector_cols)
        if self.values.shape != expected:
            raise ValueError(f"sinogram shape {self.values.shape}, geometry expects {expected}")
        if self.mask.flags.shape != expected:
            raise ValueError(f"mask shape {self.mask.flags.shape}, geometry expects {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sinogram contains non-finite values")

    @classmethod
    def zeros(cls, geometry: ScanGeometry, dtype=np.float32) -> "Sinogram":
        shape = (geometry.n_views, geometry.detector_rows, geometry.detector_cols)
        return cls(geometry, np.zeros(shape, dtype=dtype), MeasurementMask.all_measured(shape))

    def copy(self) -> "Sinogram":
        return Sinogram(self.geometry, self.values.copy(), self.mask.copy())


@dataclass
class HuCalibration:
    """Linear attenuation of water, anchoring the Hounsfield scale."""

    mu_water_per_mm: float = 0.02

    def __post_init__(self):
        if self.mu_water_per_mm <= 0:
            raise ValueError("mu_water_per_mm must be > 0")


def hu_to_mu(hu, cal: HuCalibration = HuCalibration()):
    """HU -> attenuation in 1/mm; accepts scalars or arrays."""
    return cal.mu_water_per_mm * (1.0 + np.asarray(hu, dtype=np.float64) / 1000.0)


def mu_to_hu(mu, cal: HuCalibration = HuCalibration()):
    """Attenuation in 1/mm -> HU; accepts scalars or arrays."""
    return 1000.0 * (np.asarray(mu, dtype=np.float64) - cal.mu_water_per_mm) / cal.mu_water_per_mm
