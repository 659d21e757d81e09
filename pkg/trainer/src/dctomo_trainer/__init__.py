"""Artifact-learning prior trainer for the dctomo reconstruction pipeline."""

from .dataset import TrainingPairSet, build_dataset, pairs_from_volumes, split_by_phantom
from .infer import infer_prior_file, infer_prior_volume, predict_artifact
from .model import ArtifactUNet
from .train import TrainerConfig, TrainingResult, load_checkpoint, save_checkpoint, train
from .volumes import VolumeFile, read_volume, write_volume

__version__ = "0.1.0"
