"""Fine-tuning loop with per-epoch train/validation loss logging."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from landcover._validation import check_pair
from landcover.dataset import AugmentationConfig, DatasetSplit, LabeledImage, augment_pixels, resize_image
from landcover.exceptions import NonFiniteLossError
from landcover.models import ModelHandle, check_input_size, save_checkpoint, to_tensor

logger = logging.getLogger(__name__)

EPS = 1e-7


@dataclass
class TrainingConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: Optional[float] = None
    seed: int = 0
    input_size: Optional[int] = None
    freeze_backbone: bool = False
    checkpoint_dir: Path = Path("checkpoints")

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        self.checkpoint_dir = Path(self.checkpoint_dir)

    def resolved_learning_rate(self, profile_name: str) -> float:
        if self.learning_rate is not None:
            return float(self.learning_rate)
        return 1e-3 if profile_name == "tiny_cnn" else 1e-4

    def resolved_input_size(self, profile) -> int:
        size = profile.default_input_size if self.input_size is None else int(self.input_size)
        # inception needs 299; a smaller request is raised to the minimum rather than rejected
        return max(size, profile.min_input_size)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainingHistory:
    model_name: str
    logs: list[EpochLog] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    best_epoch: Optional[int] = None

    @property
    def train_losses(self) -> list[float]:
        return [log.train_loss for log in self.logs]

    @property
    def val_losses(self) -> list[float]:
        return [log.val_loss for log in self.logs]


def compute_loss(probabilities, labels) -> float:
    """Mean binary cross-entropy over all B x L entries, probabilities clipped to [eps, 1-eps]."""
    p, y = check_pair(probabilities, labels)
    p = np.clip(p, EPS, 1.0 - EPS)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1.0 - p))))


def _torch_loss(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    p = probabilities.clamp(EPS, 1.0 - EPS)
    return -(labels * torch.log(p) + (1 - labels) * torch.log(1 - p)).mean()


def _prepare(images: Sequence[LabeledImage], size: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([resize_image(img.pixels, size) for img in images])
    y = np.stack([img.labels for img in images]).astype(np.float32)
    return x, y


def _evaluate_loss(model: ModelHandle, x: np.ndarray, y: np.ndarray, batch_size: int) -> float:
    net = model.network
    net.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            xb = to_tensor(x[start:start + batch_size])
            yb = torch.from_numpy(y[start:start + batch_size])
            total += float(_torch_loss(net(xb), yb)) * len(xb)
    return total / len(x)


def train(model: ModelHandle, split: DatasetSplit, config: TrainingConfig,
          augment: Optional[AugmentationConfig] = None) -> TrainingHistory:
    """Train ``model`` in place for ``config.epochs`` epochs.

    Images are resized to the profile's input size up front and augmented on
    the fly each epoch. The weights with the lowest validation loss are saved
    to ``<checkpoint_dir>/model.pt``; the last epoch's weights go to
    ``final.pt``. Both carry a JSON manifest.
    """
    if not split.train or not split.val:
        raise ValueError("training needs non-empty train and validation sets")
    n_labels = split.train[0].labels.shape[0]
    if model.head_width != n_labels:
        raise ValueError(f"model head has {model.head_width} outputs but labels have {n_labels}")
    augment = augment or AugmentationConfig.disabled()

    size = config.resolved_input_size(model.profile)
    check_input_size(model.profile, size, size)
    model.input_size = size
    x_train, y_train = _prepare(split.train, size)
    x_val, y_val = _prepare(split.val, size)

    rng = np.random.default_rng(config.seed)
    net = model.network
    model.set_backbone_trainable(not config.freeze_backbone)
    params = [p for p in net.parameters() if p.requires_grad]
    lr = config.resolved_learning_rate(model.profile.name)

    ckpt_dir = Path(config.checkpoint_dir)
    best_path = ckpt_dir / "model.pt"
    history = TrainingHistory(model_name=model.profile.name, checkpoint_path=best_path)
    meta = dict(training_seed=config.seed, val_fraction=split.val_fraction, split_seed=split.seed,
                learning_rate=lr, batch_size=config.batch_size, freeze_backbone=config.freeze_backbone)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        optimizer = torch.optim.Adam(params, lr=lr)
        best = math.inf
        for epoch in range(1, config.epochs + 1):
            net.train()
            order = rng.permutation(len(x_train))
            running, seen = 0.0, 0
            for b, start in enumerate(range(0, len(order), config.batch_size), start=1):
                idx = order[start:start + config.batch_size]
                xb = np.stack([augment_pixels(x_train[i], augment.sample(rng)) for i in idx])
                yb = torch.from_numpy(y_train[idx])
                optimizer.zero_grad()
                loss = _torch_loss(net(to_tensor(xb)), yb)
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(f"{model.profile.name}: non-finite loss at epoch {epoch}, batch {b}")
                loss.backward()
                optimizer.step()
                running += float(loss.detach()) * len(idx)
                seen += len(idx)
            train_loss = running / seen
            val_loss = _evaluate_loss(model, x_val, y_val, config.batch_size)
            if not math.isfinite(val_loss):
                raise NonFiniteLossError(f"{model.profile.name}: non-finite validation loss at epoch {epoch}")
            history.logs.append(EpochLog(epoch, train_loss, val_loss))
            logger.info("%s epoch %d train_loss=%.6f val_loss=%.6f", model.profile.name, epoch, train_loss, val_loss)
            if val_loss < best:
                best = val_loss
                history.best_epoch = epoch
                save_checkpoint(model, best_path, epoch=epoch, val_loss=val_loss, **meta)
        save_checkpoint(model, ckpt_dir / "final.pt", epoch=config.epochs, val_loss=val_loss, **meta)
    net.eval()
    return history


def detect_overfitting(history: TrainingHistory, window: int = 2) -> Optional[int]:
    """First epoch where val loss rises while train loss falls for ``window`` consecutive epochs."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    logs = history.logs
    diverging = [
        logs[i].val_loss > logs[i - 1].val_loss and logs[i].train_loss < logs[i - 1].train_loss
        for i in range(1, len(logs))
    ]
    # diverging[k] describes the step into epoch logs[k + 1]
    for k in range(len(diverging) - window + 1):
        if all(diverging[k:k + window]):
            return logs[k + 1].epoch
    return None


LOSS_COLUMNS = ("model", "epoch", "train_loss", "val_loss")


def export_loss_curves(histories: Sequence[TrainingHistory], out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
        for h in histories:
            for log in h.logs:
                writer.writerow([h.model_name, log.epoch, repr(log.train_loss), repr(log.val_loss)])
    return out


def read_loss_curves(path) -> list[TrainingHistory]:
    histories: dict[str, TrainingHistory] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            h = histories.setdefault(row["model"], TrainingHistory(model_name=row["model"]))
            h.logs.append(EpochLog(int(row["epoch"]), float(row["train_loss"]), float(row["val_loss"])))
    return list(histories.values())
