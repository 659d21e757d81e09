"""Training loop: l2 loss on artifact images, per-epoch learning-rate decay.

Deterministic for a fixed seed; the checkpoint keeps the weights of the epoch
with the best validation loss together with the normalization scale, so
inference is self-contained.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dataset import TrainingPairSet, split_by_phantom
from .model import ArtifactUNet

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    lr_decay_per_epoch: float = 0.97
    weight_penalty: float = 1e-4  # l2 regularization of the network weights
    batch_size: int = 4
    base_channels: int = 16
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0 or not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError("epochs, learning rate, and decay must be positive (decay <= 1)")
        if self.weight_penalty < 0 or self.batch_size < 1:
            raise ValueError("weight penalty must be >= 0 and batch size >= 1")


@dataclass
class TrainingResult:
    model: ArtifactUNet
    norm_scale: float
    train_loss: list
    val_loss: list
    best_epoch: int


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(pairs: TrainingPairSet, cfg: TrainerConfig) -> TrainingResult:
    """Fit the artifact U-Net; returns the best-validation model and loss curves."""
    if len(pairs) == 0:
        raise ValueError("empty training pair set")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    train_set, val_set = split_by_phantom(pairs, cfg.val_fraction, cfg.seed)
    if len(val_set) == 0:
        val_set = train_set  # single-phantom corpus: monitor the training loss

    model = ArtifactUNet(cfg.base_channels)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_penalty
    )
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=cfg.lr_decay_per_epoch)
    loss_fn = nn.MSELoss()

    x_train = torch.from_numpy(train_set.inputs[:, None, :, :])
    y_train = torch.from_numpy(train_set.targets[:, None, :, :])
    x_val = torch.from_numpy(val_set.inputs[:, None, :, :])
    y_val = torch.from_numpy(val_set.targets[:, None, :, :])

    train_curve, val_curve = [], []
    best_state, best_val, best_epoch = None, float("inf"), -1
    for epoch in range(cfg.epochs):
        model.train()
        epoch_loss, n_batches = 0.0, 0
        for batch in _epoch_batches(len(train_set), cfg.batch_size, rng):
            optimizer.zero_grad()
            pred = model(x_train[batch])
            loss = loss_fn(pred, y_train[batch])
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        scheduler.step()
        train_loss = epoch_loss / n_batches
        if not np.isfinite(train_loss):
            raise RuntimeError(f"training diverged at epoch {epoch + 1}: loss is not finite")
        model.eval()
        with torch.no_grad():
            val_loss = float(loss_fn(model(x_val), y_val))
        train_curve.append(train_loss)
        val_curve.append(val_loss)
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_state = copy.deepcopy(model.state_dict())
        if (epoch + 1) % 25 == 0:
            log.info("epoch %d: train %.3e val %.3e", epoch + 1, train_loss, val_loss)

    model.load_state_dict(best_state)
    model.eval()
    return TrainingResult(
        model=model,
        norm_scale=pairs.norm_scale,
        train_loss=train_curve,
        val_loss=val_curve,
        best_epoch=best_epoch,
    )


def save_checkpoint(path: str, result: TrainingResult, cfg: TrainerConfig) -> None:
    torch.save(
        {
            "state_dict": result.model.state_dict(),
            "base_channels": cfg.base_channels,
            "norm_scale": result.norm_scale,
            "train_loss": result.train_loss,
            "val_loss": result.val_loss,
            "best_epoch": result.best_epoch,
        },
        path,
    )


def load_checkpoint(path: str) -> tuple[ArtifactUNet, float]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = ArtifactUNet(payload["base_channels"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, float(payload["norm_scale"])
