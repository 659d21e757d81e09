"""Slice-wise inference: prior = corrupted input minus the predicted artifact."""

from __future__ import annotations

import numpy as np
import torch

from .volumes import VolumeFile, like, read_volume, write_volume


def predict_artifact(model, values: np.ndarray, norm_scale: float) -> np.ndarray:
    """Run the network on every slice of ``values`` (nz, ny, nx), in 1/mm units."""
    x = torch.from_numpy(np.asarray(values, dtype=np.float32)[:, None, :, :] / norm_scale)
    model.eval()
    with torch.no_grad():
        pred = model(x).numpy()[:, 0, :, :]
    return pred * norm_scale


def infer_prior_volume(model, corrupted: VolumeFile, norm_scale: float) -> VolumeFile:
    """Prior volume = input - model(input), voxel for voxel."""
    artifact = predict_artifact(model, corrupted.values, norm_scale)
    return like(corrupted, corrupted.values - artifact)


def infer_prior_file(model, input_path: str, output_path: str, norm_scale: float) -> None:
    corrupted = read_volume(input_path)
    write_volume(output_path, infer_prior_volume(model, corrupted, norm_scale))
