"""Slice-wise training pairs built from paired corrupted/reference volumes.

For the truncation scenario the network input is the reconstruction from
extrapolated data (``wce.vol``); limited-angle and sparse-view use the plain
FBP (``fbp.vol``).  The target of every pair is the artifact image, i.e.
input minus reference, so the network learns the corruption and the prior is
recovered at inference time by subtracting the prediction from the input.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .volumes import read_volume

REFERENCE_NAME = "truth.vol"
INPUT_NAME_BY_SCENARIO = {
    "truncation": "wce.vol",
    "limited_angle": "fbp.vol",
    "sparse_view": "fbp.vol",
}
# fixed intensity scale (about twice water) applied to inputs and targets
NORM_SCALE = 0.04


@dataclass
class TrainingPairSet:
    inputs: np.ndarray  # (n, H, W) float32, normalized
    targets: np.ndarray  # (n, H, W) float32, normalized artifact images
    scenario: str
    norm_scale: float = NORM_SCALE
    phantom_ids: list[str] = field(default_factory=list)  # one entry per pair

    def __post_init__(self):
        if self.inputs.shape != self.targets.shape:
            raise ValueError(
                f"input shape {self.inputs.shape} does not match target shape {self.targets.shape}"
            )

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, index) -> "TrainingPairSet":
        ids = [self.phantom_ids[i] for i in np.atleast_1d(np.arange(len(self))[index])]
        return TrainingPairSet(
            inputs=self.inputs[index],
            targets=self.targets[index],
            scenario=self.scenario,
            norm_scale=self.norm_scale,
            phantom_ids=ids,
        )

    def save(self, path: str) -> None:
        np.savez_compressed(
            path,
            inputs=self.inputs,
            targets=self.targets,
            scenario=self.scenario,
            norm_scale=self.norm_scale,
            phantom_ids=np.array(self.phantom_ids),
        )

    @classmethod
    def load(cls, path: str) -> "TrainingPairSet":
        data = np.load(path, allow_pickle=False)
        return cls(
            inputs=data["inputs"],
            targets=data["targets"],
            scenario=str(data["scenario"]),
            norm_scale=float(data["norm_scale"]),
            phantom_ids=[str(p) for p in data["phantom_ids"]],
        )


def pairs_from_volumes(corrupted, reference, scenario: str, phantom_id: str = "") -> TrainingPairSet:
    """Slice a corrupted/reference volume pair into normalized 2D pairs."""
    if corrupted.values.shape != reference.values.shape:
        raise ValueError(
            f"{phantom_id}: corrupted shape {corrupted.values.shape} does not match "
            f"reference shape {reference.values.shape}"
        )
    inputs = np.asarray(corrupted.values, dtype=np.float32) / NORM_SCALE
    targets = inputs - np.asarray(reference.values, dtype=np.float32) / NORM_SCALE
    ids = [phantom_id] * inputs.shape[0]
    return TrainingPairSet(inputs=inputs, targets=targets, scenario=scenario, phantom_ids=ids)


def build_dataset(corpus_dir: str, scenario: str) -> TrainingPairSet:
    """Collect slice pairs from every phantom directory under ``corpus_dir``.

    Each phantom directory must contain the reference volume and the
    scenario's corrupted volume; anything unpaired is an error.
    """
    if scenario not in INPUT_NAME_BY_SCENARIO:
        raise ValueError(f"unknown scenario {scenario!r}")
    input_name = INPUT_NAME_BY_SCENARIO[scenario]
    phantom_dirs = sorted(
        d for d in os.listdir(corpus_dir) if os.path.isdir(os.path.join(corpus_dir, d))
    )
    if not phantom_dirs:
        raise ValueError(f"no phantom directories under {corpus_dir}")
    parts = []
    for name in phantom_dirs:
        base = os.path.join(corpus_dir, name)
        input_path = os.path.join(base, input_name)
        ref_path = os.path.join(base, REFERENCE_NAME)
        if not os.path.exists(input_path) or not os.path.exists(ref_path):
            raise FileNotFoundError(
                f"{name}: needs both {input_name} and {REFERENCE_NAME} (unpaired files)"
            )
        parts.append(pairs_from_volumes(read_volume(input_path), read_volume(ref_path), scenario, name))
    return TrainingPairSet(
        inputs=np.concatenate([p.inputs for p in parts]),
        targets=np.concatenate([p.targets for p in parts]),
        scenario=scenario,
        phantom_ids=[pid for p in parts for pid in p.phantom_ids],
    )


def split_by_phantom(pairs: TrainingPairSet, val_fraction: float = 0.1, seed: int = 0):
    """Deterministic train/validation split keeping each phantom on one side."""
    ids = sorted(set(pairs.phantom_ids))
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n_val = max(1, int(round(val_fraction * len(ids)))) if len(ids) > 1 else 0
    val_ids = set(ids[:n_val])
    val_idx = np.array([pid in val_ids for pid in pairs.phantom_ids])
    return pairs.subset(~val_idx), pairs.subset(val_idx)
