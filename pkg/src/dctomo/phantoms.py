"""Analytic ellipse/ellipsoid phantoms and the classic head-phantom preset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import HuCalibration, ImageGrid, Volume, hu_to_mu


@dataclass
class Ellipse:
    """One additive ellipse (2D) or ellipsoid (3D) component."""

    center_mm: tuple[float, float, float]
    semi_axes_mm: tuple[float, float, float]
    rotation_deg: float = 0.0  # in-plane rotation about z
    delta_mu: float = 0.0

    def __post_init__(self):
        if min(self.semi_axes_mm) <= 0:
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes_mm}")


@dataclass
class Lesion:
    """Spherical (disk in 2D) contrast feature, contrast given in HU."""

    center_mm: tuple[float, float, float]
    radius_mm: float
    contrast_hu: float

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ValueError("lesion radius must be positive")


@dataclass
class EllipsePhantomSpec:
    ellipses: list[Ellipse] = field(default_factory=list)
    lesions: list[Lesion] = field(default_factory=list)
    supersample: int = 1  # subsamples per axis for antialiased voxelization

    def __post_init__(self):
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")


# Classic Shepp-Logan head phantom: (value, a, b, x0, y0, phi_deg) in unit-disk
# coordinates, value in multiples of the water attenuation.
SHEPP_LOGAN_ELLIPSES = [
    (2.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
]


def shepp_logan_spec(
    radius_mm: float,
    cal: HuCalibration = HuCalibration(),
    lesions: list[Lesion] | None = None,
    supersample: int = 4,
) -> EllipsePhantomSpec:
    """Shepp-Logan phantom scaled so the unit disk maps to ``radius_mm``.

    Values are relative water multiples from SHEPP_LOGAN_ELLIPSES times the
    calibration's water attenuation, so the skull shell lands at +1000 HU and
    soft tissue near +20 HU.
    """
    ellipses = [
        Ellipse(
            center_mm=(x0 * radius_mm, y0 * radius_mm, 0.0),
            semi_axes_mm=(a * radius_mm, b * radius_mm, radius_mm),
            rotation_deg=phi,
            delta_mu=val * cal.mu_water_per_mm,
        )
        for (val, a, b, x0, y0, phi) in SHEPP_LOGAN_ELLIPSES
    ]
    return EllipsePhantomSpec(ellipses=ellipses, lesions=list(lesions or []), supersample=supersample)


def disk_spec(radius_mm: float, mu: float, center_mm=(0.0, 0.0, 0.0), supersample: int = 1) -> EllipsePhantomSpec:
    """Uniform disk/cylinder of attenuation ``mu``."""
    e = Ellipse(center_mm=center_mm, semi_axes_mm=(radius_mm, radius_mm, radius_mm), delta_mu=mu)
    return EllipsePhantomSpec(ellipses=[e], supersample=supersample)


def _inside_ellipse(e: Ellipse, x, y, z, two_d: bool):
    phi = np.deg2rad(e.rotation_deg)
    cx, cy, cz = e.center_mm
    a, b, c = e.semi_axes_mm
    xr = (x - cx) * np.cos(phi) + (y - cy) * np.sin(phi)
    yr = -(x - cx) * np.sin(phi) + (y - cy) * np.cos(phi)
    q = (xr / a) ** 2 + (yr / b) ** 2
    if not two_d:
        q = q + ((z - cz) / c) ** 2
    return q <= 1.0


def _inside_lesion(l: Lesion, x, y, z, two_d: bool):
    cx, cy, cz = l.center_mm
    q = (x - cx) ** 2 + (y - cy) ** 2
    if not two_d:
        q = q + (z - cz) ** 2
    return q <= l.radius_mm**2


def make_phantom(
    spec: EllipsePhantomSpec, grid: ImageGrid, cal: HuCalibration = HuCalibration()
) -> Volume:
    """Render the phantom spec onto ``grid``; deterministic, additive shapes.

    With ``supersample > 1`` each voxel value is the average over an n x n
    (x n in 3D) subgrid, i.e. an area/volume-fraction antialiased rendering.
    """
    nx, ny, nz = grid.dims
    sx, sy, sz = grid.spacing_mm
    two_d = nz == 1
    ss = spec.supersample
    xs = grid.axis_coords(0)
    ys = grid.axis_coords(1)
    zs = grid.axis_coords(2)

    if spec.lesions and spec.ellipses:
        for l in spec.lesions:
            centers = np.array([l.center_mm])
            inside_body = np.zeros(1, dtype=bool)
            for e in spec.ellipses:
                if e.delta_mu > 0:
                    inside_body |= _inside_ellipse(
                        e, centers[:, 0], centers[:, 1], centers[:, 2], two_d
                    )
            if not inside_body.all():
                raise ValueError(f"lesion at {l.center_mm} lies outside the body support")

    values = np.zeros((nz, ny, nx), dtype=np.float64)
    offsets = (np.arange(ss) + 0.5) / ss - 0.5
    z_offsets = offsets if (not two_d and ss > 1) else np.array([0.0])
    for oz in z_offsets:
        for oy in offsets:
            for ox in offsets:
                x = xs + ox * sx
                y = ys + oy * sy
                z = zs + oz * sz
                X, Y = np.meshgrid(x, y, indexing="xy")
                for iz in range(nz):
                    acc = np.zeros((ny, nx), dtype=np.float64)
                    for e in spec.ellipses:
                        acc += e.delta_mu * _inside_ellipse(e, X, Y, z[iz], two_d)
                    for l in spec.lesions:
                        acc += float(hu_to_mu(l.contrast_hu, cal) - cal.mu_water_per_mm) * _inside_lesion(
                            l, X, Y, z[iz], two_d
                        )
                    values[iz] += acc
    values /= offsets.size ** 2 * z_offsets.size
    return Volume(grid, values.astype(np.float32))
