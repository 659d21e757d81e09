"""Reader/writer for the reconstruction toolkit's volume file format.

The trainer exchanges images with the reconstruction pipeline exclusively
through these files: raw little-endian float32 (x fastest, then y, then z)
plus a YAML sidecar (``<path>.yml``) with dims, spacing, origin, and a unit
tag.  Values are attenuation in 1/mm unless tagged ``hu``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import yaml

VOLUME_FORMAT = "dctomo-volume-v1"
MU_WATER_PER_MM = 0.02


@dataclass
class VolumeFile:
    values: np.ndarray  # (nz, ny, nx) float32, 1/mm
    dims: tuple[int, int, int]  # (nx, ny, nz)
    spacing_mm: tuple[float, float, float]
    origin_mm: tuple[float, float, float]

    @property
    def n_slices(self) -> int:
        return self.values.shape[0]


def read_volume(path: str) -> VolumeFile:
    header_path = path + ".yml"
    if not os.path.exists(path) or not os.path.exists(header_path):
        raise FileNotFoundError(f"volume file or header missing for {path}")
    with open(header_path) as f:
        header = yaml.safe_load(f)
    if header.get("format") != VOLUME_FORMAT:
        raise ValueError(f"{path}: not a {VOLUME_FORMAT} file")
    nx, ny, nz = header["dims"]
    values = np.fromfile(path, dtype="<f4")
    if values.size != nx * ny * nz:
        raise ValueError(f"{path}: payload has {values.size} values, header says {nx * ny * nz}")
    values = values.reshape(nz, ny, nx)
    if header.get("unit", "mu_per_mm") == "hu":
        values = (MU_WATER_PER_MM * (1.0 + values / 1000.0)).astype(np.float32)
    return VolumeFile(
        values=values,
        dims=(nx, ny, nz),
        spacing_mm=tuple(header["spacing_mm"]),
        origin_mm=tuple(header["origin_mm"]),
    )


def write_volume(path: str, volume: VolumeFile) -> None:
    header = {
        "format": VOLUME_FORMAT,
        "dims": list(volume.dims),
        "spacing_mm": list(volume.spacing_mm),
        "origin_mm": list(volume.origin_mm),
        "unit": "mu_per_mm",
        "dtype": "float32-le",
        "order": "x-fastest, then y, then z",
    }
    np.asarray(volume.values, dtype="<f4").tofile(path)
    with open(path + ".yml", "w") as f:
        yaml.safe_dump(header, f, sort_keys=False)


def like(volume: VolumeFile, values: np.ndarray) -> VolumeFile:
    """New VolumeFile sharing geometry with ``volume``."""
    return VolumeFile(
        values=np.asarray(values, dtype=np.float32),
        dims=volume.dims,
        spacing_mm=volume.spacing_mm,
        origin_mm=volume.origin_mm,
    )
