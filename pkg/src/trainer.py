"""
Mini-batch SGD training loop, CSV training log and batch evaluation.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .augment import Augmenter, Image
from .dataset import load_images, stack_images, stratified_split
from .exceptions import ConfigError, InputError, NumericalError
from .models import AugmentConfig, DatasetManifest, EpochRecord, RunConfig, TrainConfig
from .network import DpnSeNet, build_model, predict
from .optim import SGD
from .tensor import backward, cross_entropy

logger = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "loss", "acc"]


def predict_labels(model: DpnSeNet, images: Sequence[Image], batch_size: int = 32) -> np.ndarray:
    """Argmax class per image, in inference mode."""
    if not images:
        return np.zeros(0, dtype=np.int64)
    out = []
    for start in range(0, len(images), batch_size):
        probs = predict(model, stack_images(images[start:start + batch_size]))
        out.append(np.argmax(probs, axis=1))
    return np.concatenate(out)


def evaluate_accuracy(model: DpnSeNet, images: Sequence[Image], labels: Sequence[int]) -> float:
    if not len(images):
        raise InputError("cannot evaluate on an empty split")
    return float(np.mean(predict_labels(model, images) == np.asarray(labels)))


class TrainingLog:
    """CSV writer for per-epoch rows: epoch,loss,acc."""

    def __init__(self, stream: TextIO):
        self.writer = csv.writer(stream, lineterminator="\n")
        self.stream = stream
        self.writer.writerow(CSV_HEADER)

    def write(self, record: EpochRecord) -> None:
        self.writer.writerow([record.epoch, f"{record.loss:.10f}", f"{record.accuracy:.6f}"])
        self.stream.flush()


def batch_bounds(n: int, batch_size: int, min_batch: int = 1) -> List[Tuple[int, int]]:
    """[start, stop) mini-batch ranges over n items; a tail shorter than min_batch joins the batch before it."""
    bounds = [(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < min_batch:
        _, stop = bounds.pop()
        bounds[-1] = (bounds[-1][0], stop)
    return bounds


class Trainer:
    """Trains one model with SGD on an in-memory image list."""

    def __init__(self, model: DpnSeNet, cfg: TrainConfig, augment_cfg: Optional[AugmentConfig] = None,
                 jobs: int = 1):
        if model.final_size == 1 and cfg.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2 when the last stage is 1x1")
        self.model = model
        self.cfg = cfg
        self.jobs = jobs
        self.optimizer = SGD(model.parameters(), cfg.learning_rate, momentum=cfg.momentum,
                             weight_decay=cfg.weight_decay)
        self.augmenter = None
        if cfg.augment:
            augment_cfg = augment_cfg or AugmentConfig(seed=cfg.seed)
            # training crops must match the network input
            self.augmenter = Augmenter(augment_cfg.model_copy(update={"target": model.cfg.input_size}))
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=cfg.seed)))

    def _batch(self, images: Sequence[Image], indices: np.ndarray, epoch: int) -> np.ndarray:
        selected = [images[i] for i in indices]
        if self.augmenter is not None:
            counters = [epoch * len(images) + int(i) for i in indices]
            selected = self.augmenter.augment_batch(selected, counters, jobs=self.jobs)
        return stack_images(selected)

    @property
    def min_batch(self) -> int:
        # batch norm over a 1x1 map needs two samples
        return 2 if self.model.final_size == 1 else 1

    def train_epoch(self, images: Sequence[Image], labels: np.ndarray, epoch: int) -> EpochRecord:
        self.model.train()
        order = self.rng.permutation(len(images))
        total_loss = 0.0
        correct = 0
        for start, stop in batch_bounds(len(order), self.cfg.batch_size, self.min_batch):
            indices = order[start:stop]
            batch_labels = labels[indices]
            logits = self.model.forward(self._batch(images, indices, epoch), training=True)
            loss = cross_entropy(logits, batch_labels)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite loss ({value}) at epoch {epoch}; "
                    f"try a smaller learning rate than {self.cfg.learning_rate}"
                )
            backward(loss)
            self.optimizer.step()
            self.optimizer.zero_grad()
            total_loss += value * len(indices)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == batch_labels))
        return EpochRecord(epoch=epoch, loss=total_loss / len(images), accuracy=correct / len(images))

    def fit(self, images: Sequence[Image], labels: Sequence[int],
            val_images: Optional[Sequence[Image]] = None, val_labels: Optional[Sequence[int]] = None,
            log: Optional[TrainingLog] = None) -> List[EpochRecord]:
        """Run cfg.epochs epochs; zero epochs leaves the model at its initialization."""
        if not len(images):
            raise InputError("training split is empty")
        if len(images) < self.min_batch:
            raise InputError(f"a network ending at 1x1 needs at least {self.min_batch} training images")
        labels = np.asarray(labels, dtype=np.int64)
        history = []
        for epoch in range(1, self.cfg.epochs + 1):
            record = self.train_epoch(images, labels, epoch)
            if val_images:
                record.val_accuracy = evaluate_accuracy(self.model, val_images, val_labels)
            logger.info("epoch %d loss=%.4f acc=%.4f%s", epoch, record.loss, record.accuracy,
                        "" if record.val_accuracy is None else f" val_acc={record.val_accuracy:.4f}")
            if log is not None:
                log.write(record)
            history.append(record)
        self.model.eval()
        return history


@dataclass
class TrainResult:
    model: DpnSeNet
    history: List[EpochRecord]
    train_indices: np.ndarray
    val_indices: np.ndarray
    val_accuracy: Optional[float] = None
    class_names: List[str] = field(default_factory=list)


def train_from_manifest(cfg: RunConfig, manifest: DatasetManifest, jobs: int = 1,
                        log_path: Optional[Union[str, Path]] = None) -> TrainResult:
    """Split, load, build the model from cfg.train.seed and train it."""
    if len(manifest.class_names) != cfg.model.num_classes:
        raise InputError(
            f"manifest has {len(manifest.class_names)} classes but the model has {cfg.model.num_classes}"
        )
    labels = manifest.label_indices()
    train_idx, val_idx = stratified_split(labels, cfg.train.val_fraction, cfg.train.seed)
    images, train_labels = load_images(manifest, cfg.model.input_channels, cfg.model.input_size, train_idx)
    val_images, val_labels = load_images(manifest, cfg.model.input_channels, cfg.model.input_size, val_idx)
    model = build_model(cfg.model, seed=cfg.train.seed)
    trainer = Trainer(model, cfg.train, cfg.augment, jobs=jobs)
    logger.info("training %s on %d images (%d held out)",
                "DPN-SE" if cfg.model.se_enabled else "DPN", len(images), len(val_images))
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8", newline="") as stream:
            history = trainer.fit(images, train_labels, val_images, val_labels, log=TrainingLog(stream))
    else:
        history = trainer.fit(images, train_labels, val_images, val_labels)
    val_accuracy = evaluate_accuracy(model, val_images, val_labels) if val_images else None
    return TrainResult(model, history, train_idx, val_idx, val_accuracy, list(manifest.class_names))
