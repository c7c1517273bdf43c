"""SGD training loop, data augmentation and evaluation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .activation import TemperatureSchedule
from .autodiff import Tensor, cross_entropy_from_logits
from .data import LabeledDataset
from .model import Model

REPORT_HEADER = ["epoch", "lr", "temperature", "train_loss", "train_acc", "val_acc"]


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.05
    lr_drop_epochs: tuple = ()
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    augment: bool = True
    t_init: float | None = None
    t_final: float | None = None

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for d in self.lr_drop_epochs if d <= epoch)
        return self.lr / 10 ** drops

    def steps_per_epoch(self, n_train: int) -> int:
        return math.ceil(n_train / self.batch_size)

    def total_steps(self, n_train: int) -> int:
        return self.epochs * self.steps_per_epoch(n_train)


@dataclass
class TrainingReport:
    rows: list = field(default_factory=list)
    temperature_trace: list = field(default_factory=list)
    lr_trace: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_HEADER)
            for row in self.rows:
                writer.writerow([_fmt(row[k]) for k in REPORT_HEADER])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(v)
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.6g}"


def fit_normalization(model: Model, images: np.ndarray):
    """Set per-channel input mean/std from the training images."""
    x = images.astype(np.float64)
    model.input_mean[...] = x.mean(axis=(0, 2, 3))
    model.input_std[...] = np.maximum(x.std(axis=(0, 2, 3)), 1e-3)


def apply_augmentation(images: np.ndarray, offsets: np.ndarray, flips: np.ndarray,
                       pad: int = 4) -> np.ndarray:
    """Zero-pad by ``pad``, crop at per-image ``offsets`` (row, col), then flip."""
    n, c, h, w = images.shape
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=images.dtype)
    padded[:, :, pad:pad + h, pad:pad + w] = images
    out = np.empty_like(images)
    for i in range(n):
        r, q = offsets[i]
        crop = padded[i, :, r:r + h, q:q + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def augment(images: np.ndarray, seed, pad: int = 4) -> np.ndarray:
    """Random crop from the zero-padded image plus a horizontal flip w.p. 1/2."""
    rng = np.random.default_rng(seed)
    n = len(images)
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    return apply_augmentation(images, offsets, flips, pad)


def sgd_step(model: Model, x, labels, lr: float, momentum: float = 0.9,
             weight_decay: float = 5e-4, step: int | None = None, velocity: dict | None = None) -> float:
    """One momentum-SGD update; returns the mean cross-entropy.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    Velocities live in ``velocity`` (defaults to a dict stored on the model).
    """
    return _update(model, x, labels, lr, momentum, weight_decay, step, velocity)[0]


def _update(model, x, labels, lr, momentum, weight_decay, step, velocity):
    if len(labels) == 0:
        raise ValueError("empty batch")
    if velocity is None:
        velocity = model.__dict__.setdefault("_velocity", {})
    params = list(model.named_parameters())
    for _, p in params:
        p.zero_grad()
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=model.dtype))
    logits = model.forward(x, step=step, training=True)
    loss = cross_entropy_from_logits(logits, labels)
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value} at step {step}")
    loss.backward()
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        v = velocity.get(name)
        v = g + weight_decay * p.data if v is None else momentum * v + g + weight_decay * p.data
        velocity[name] = v
        p.data -= (lr * v).astype(p.dtype)
    return value, logits.data


def predict(model: Model, images: np.ndarray, mode=None, batch_size: int = 500) -> np.ndarray:
    return model.logits(images, mode=mode, batch_size=batch_size).argmax(axis=1)


def evaluate(model: Model, dataset: LabeledDataset, mode=None, batch_size: int = 500) -> float:
    """Top-1 accuracy in the requested activation mode."""
    pred = predict(model, dataset.images, mode=mode, batch_size=batch_size)
    return float(np.mean(pred == dataset.labels))


def inference_mode(model: Model) -> str:
    """Deployment mode: annealed models run with the hard winner-takes-all."""
    return "wta" if model.config.mode == "anneal" else model.config.mode


def train(model: Model, train_set: LabeledDataset, config: TrainConfig,
          val_set: LabeledDataset | None = None, callbacks=()) -> TrainingReport:
    """Train ``model`` in its configured activation mode.

    In anneal mode the temperature follows the geometric schedule over all
    optimizer steps; ``model.temperature`` holds the temperature reached after
    the latest step, so it equals ``t_final`` once training ends.  Per-epoch
    validation accuracy is measured at the current temperature.
    """
    n = len(train_set)
    spe = config.steps_per_epoch(n)
    total = config.total_steps(n)
    anneal = model.config.mode == "anneal"
    if anneal:
        t_init = config.t_init if config.t_init is not None else model.config.t_init
        t_final = config.t_final if config.t_final is not None else model.config.t_final
        model.set_schedule(TemperatureSchedule(t_init, t_final, total))
    fit_normalization(model, train_set.images)
    seeds = np.random.SeedSequence(config.seed)
    order_seed, aug_seed = seeds.spawn(2)
    order_rng = np.random.default_rng(order_seed)
    aug_seeds = aug_seed.spawn(config.epochs)
    velocity: dict = {}
    model._velocity = velocity

    report = TrainingReport()
    if anneal:
        report.temperature_trace.append(model.temperature)
    step = 0
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        report.lr_trace.append(lr)
        perm = order_rng.permutation(n)
        images = train_set.images[perm]
        labels = train_set.labels[perm]
        if config.augment:
            images = augment(images, aug_seeds[epoch])
        loss_sum, correct = 0.0, 0
        for b in range(spe):
            sl = slice(b * config.batch_size, (b + 1) * config.batch_size)
            x = model.prepare(images[sl])
            y = labels[sl]
            loss, logits = _update(model, x, y, lr, config.momentum, config.weight_decay,
                                   step if anneal else None, velocity)
            loss_sum += loss * len(y)
            step += 1
            if anneal:
                model.temperature = model.schedule.at(step)
                report.temperature_trace.append(model.temperature)
            correct += int((logits.argmax(axis=1) == y).sum())
        val = evaluate(model, val_set) if val_set is not None else float("nan")
        row = {
            "epoch": epoch,
            "lr": lr,
            "temperature": model.temperature if anneal else float("nan"),
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
            "val_acc": val,
        }
        report.rows.append(row)
        for cb in callbacks:
            cb(epoch, row, model)
    return report

