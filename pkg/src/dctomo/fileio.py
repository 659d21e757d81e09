"""On-disk formats: raw float32 payloads plus YAML sidecar headers.

Volume files: little-endian float32, x fastest, then y, then z; header holds
dims, spacing, origin, and the unit tag.  Sinogram files: little-endian
float32, column fastest, then row, then view; header embeds the full scan
geometry, the detector convention, and a run-length-encoded measurement mask.
"""

from __future__ import annotations

import os

import numpy as np
import yaml

from .geometry import (
    HuCalibration,
    ImageGrid,
    MeasurementMask,
    ScanGeometry,
    Sinogram,
    Volume,
    hu_to_mu,
    mu_to_hu,
)

VOLUME_FORMAT = "dctomo-volume-v1"
SINOGRAM_FORMAT = "dctomo-sinogram-v1"
DETECTOR_CONVENTION = (
    "u along columns (unit vector (-sin b, cos b, 0)), v along rows (unit vector (0, 0, 1)); "
    "rays pass through detector pixel centers"
)

UNIT_MU = "mu_per_mm"
UNIT_HU = "hu"


def _header_path(path: str) -> str:
    return path + ".yml"


def rle_encode(flags: np.ndarray) -> list[list[int]]:
    """Run-length encode a flat uint8 array as [value, count] pairs."""
    flat = np.asarray(flags, dtype=np.uint8).ravel()
    if flat.size == 0:
        return []
    edges = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [flat.size]))
    return [[int(flat[s]), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(pairs: list[list[int]], size: int) -> np.ndarray:
    out = np.empty(size, dtype=np.uint8)
    pos = 0
    for value, count in pairs:
        out[pos : pos + count] = value
        pos += count
    if pos != size:
        raise ValueError(f"mask RLE decodes to {pos} entries, expected {size}")
    return out


def save_volume(
    path: str, vol: Volume, unit: str = UNIT_MU, cal: HuCalibration = HuCalibration()
) -> None:
    values = np.asarray(vol.values, dtype=np.float64)
    if unit == UNIT_HU:
        values = mu_to_hu(values, cal)
    elif unit != UNIT_MU:
        raise ValueError(f"unknown unit tag {unit!r}")
    payload = values.astype("<f4")
    header = {
        "format": VOLUME_FORMAT,
        "dims": list(vol.grid.dims),
        "spacing_mm": list(vol.grid.spacing_mm),
        "origin_mm": list(vol.grid.origin_mm),
        "unit": unit,
        "dtype": "float32-le",
        "order": "x-fastest, then y, then z",
    }
    payload.tofile(path)
    with open(_header_path(path), "w") as f:
        yaml.safe_dump(header, f, sort_keys=False)


def load_volume(path: str, cal: HuCalibration = HuCalibration()) -> Volume:
    """Load a volume file; HU-tagged data is converted to 1/mm on the way in."""
    if not os.path.exists(path) or not os.path.exists(_header_path(path)):
        raise FileNotFoundError(f"volume file or header missing for {path}")
    with open(_header_path(path)) as f:
        header = yaml.safe_load(f)
    if header.get("format") != VOLUME_FORMAT:
        raise ValueError(f"{path}: not a {VOLUME_FORMAT} file")
    grid = ImageGrid(
        dims=tuple(header["dims"]),
        spacing_mm=tuple(header["spacing_mm"]),
        origin_mm=tuple(header["origin_mm"]),
    )
    values = np.fromfile(path, dtype="<f4")
    if values.size != grid.n_voxels:
        raise ValueError(f"{path}: {values.size} values on disk, grid expects {grid.n_voxels}")
    values = values.reshape(grid.shape)
    unit = header.get("unit", UNIT_MU)
    if unit == UNIT_HU:
        values = hu_to_mu(values, cal).astype(np.float32)
    elif unit != UNIT_MU:
        raise ValueError(f"{path}: unknown unit tag {unit!r} and no calibration rule")
    return Volume(grid, values)


def save_sinogram(path: str, sino: Sinogram) -> None:
    geom = sino.geometry
    header = {
        "format": SINOGRAM_FORMAT,
        "geometry": {
            "source_to_detector_mm": geom.source_to_detector_mm,
            "source_to_isocenter_mm": geom.source_to_isocenter_mm,
            "detector_cols": geom.detector_cols,
            "detector_rows": geom.detector_rows,
            "pixel_size_mm": list(geom.pixel_size_mm),
            "angles_deg": [float(a) for a in geom.angles_deg],
            "mode": geom.mode,
        },
        "measured_views": int(np.count_nonzero(sino.mask.measured.any(axis=(1, 2)))),
        "mask_rle": rle_encode(sino.mask.flags),
        "detector_convention": DETECTOR_CONVENTION,
        "dtype": "float32-le",
        "order": "col-fastest, then row, then view",
    }
    np.asarray(sino.values, dtype="<f4").tofile(path)
    with open(_header_path(path), "w") as f:
        yaml.safe_dump(header, f, sort_keys=False)


def load_sinogram(path: str) -> Sinogram:
    if not os.path.exists(path) or not os.path.exists(_header_path(path)):
        raise FileNotFoundError(f"sinogram file or header missing for {path}")
    with open(_header_path(path)) as f:
        header = yaml.safe_load(f)
    if header.get("format") != SINOGRAM_FORMAT:
        raise ValueError(f"{path}: not a {SINOGRAM_FORMAT} file")
    g = header["geometry"]
    geom = ScanGeometry(
        source_to_detector_mm=g["source_to_detector_mm"],
        source_to_isocenter_mm=g["source_to_isocenter_mm"],
        detector_cols=g["detector_cols"],
        detector_rows=g["detector_rows"],
        pixel_size_mm=tuple(g["pixel_size_mm"]),
        angles_deg=np.asarray(g["angles_deg"], dtype=np.float64),
        mode=g["mode"],
    )
    shape = (geom.n_views, geom.detector_rows, geom.detector_cols)
    values = np.fromfile(path, dtype="<f4")
    if values.size != np.prod(shape):
        raise ValueError(f"{path}: {values.size} values on disk, geometry expects {np.prod(shape)}")
    flags = rle_decode(header["mask_rle"], int(np.prod(shape))).reshape(shape)
    return Sinogram(geom, values.reshape(shape), MeasurementMask(flags))
