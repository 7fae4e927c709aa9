"""SGD with momentum, step-halving learning rate, and test-error evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import checkpoint
from .autodiff import Tape, no_grad
from .init import he_init  # noqa: F401  (re-exported)
from .model import VDCNN
from .ops import softmax_cross_entropy
from .text import Dataset, batches

logger = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient.

    ``history`` holds the epochs completed before the failure.
    """

    def __init__(self, message: str, history: Optional["TrainHistory"] = None):
        super().__init__(message)
        self.history = history


@dataclass
class OptimConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    halve_every: int = 3
    max_epochs: int = 15
    seed: int = 0
    precision: int = 32
    clip_norm: Optional[float] = None
    eval_batch_size: int = 256

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.halve_every < 1:
            raise ValueError("halve_every must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_err: float
    test_err: float
    lr: float
    seconds: float

    def csv_line(self, with_time: bool = True) -> str:
        line = f"{self.epoch},{self.train_loss:.6f},{self.train_err:.4f},{self.test_err:.4f},{self.lr:.8g}"
        return f"{line},{self.seconds:.3f}" if with_time else line


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> EpochRecord:
        return self.records[i]

    def as_dicts(self) -> list:
        return [asdict(r) for r in self.records]


def learning_rate(epoch: int, lr0: float, halve_every: int) -> float:
    """Rate for the 0-based ``epoch``: lr0 halved every ``halve_every`` epochs."""
    return lr0 * 0.5 ** (epoch // halve_every)


def sgd_momentum_step(params, state: dict, lr: float, momentum: float = 0.9) -> None:
    """Classical momentum: v <- momentum*v + g; p <- p - lr*v; then zero g."""
    for p in params:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {p.name}")
    for p in params:
        v = state.get(p.name)
        if v is None:
            v = state[p.name] = np.zeros_like(p.data)
        v *= momentum
        v += p.grad
        p.data -= lr * v
        p.zero_grad()


def clip_gradients(params, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


def evaluate(model: VDCNN, dataset: Dataset, batch_size: int = 256) -> float:
    """Test error in percent: argmax of eval-mode logits, ties to the lowest class."""
    wrong = 0
    with no_grad():
        for ids, labels in batches(dataset, batch_size, shuffle=False, s=model.spec.seq_len):
            logits = model.forward(ids, mode="eval").data
            wrong += int(np.sum(np.argmax(logits, axis=1) != labels))
    return 100.0 * wrong / len(dataset)


def _check_compatible(model: VDCNN, ds: Dataset) -> None:
    if ds.n_classes > model.spec.n_classes:
        raise ValueError(f"dataset {ds.name!r} has {ds.n_classes} classes, model has {model.spec.n_classes}")


def train(
    model: VDCNN,
    train_set: Dataset,
    test_set: Dataset,
    cfg: OptimConfig,
    checkpoint_path: Optional[Path] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainHistory:
    """Run ``cfg.max_epochs`` epochs of mini-batch SGD.

    After each epoch the model is evaluated on ``test_set`` and, if
    ``checkpoint_path`` is given, saved there whenever the test error improves.
    """
    _check_compatible(model, train_set)
    _check_compatible(model, test_set)
    history = TrainHistory()
    params = model.parameters()
    velocity: dict = {}
    best = math.inf
    s = model.spec.seq_len

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        lr = learning_rate(epoch, cfg.lr0, cfg.halve_every)
        loss_sum, wrong, seen = 0.0, 0, 0
        for ids, labels in batches(train_set, cfg.batch_size, seed=cfg.seed, shuffle=True, s=s, epoch=epoch):
            with Tape() as tape:
                logits = model.forward(ids, mode="train")
                loss = softmax_cross_entropy(logits, labels)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss in epoch {epoch + 1}", history)
            tape.backward(loss)
            if cfg.clip_norm is not None:
                clip_gradients(params, cfg.clip_norm)
            try:
                sgd_momentum_step(params, velocity, lr, cfg.momentum)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), history) from None
            n = len(labels)
            loss_sum += value * n
            wrong += int(np.sum(np.argmax(logits.data, axis=1) != labels))
            seen += n
        test_err = evaluate(model, test_set, cfg.eval_batch_size)
        rec = EpochRecord(epoch + 1, loss_sum / seen, 100.0 * wrong / seen, test_err, lr, time.perf_counter() - t0)
        history.records.append(rec)
        logger.info("epoch %d loss %.4f train_err %.2f test_err %.2f", rec.epoch, rec.train_loss, rec.train_err, test_err)
        if checkpoint_path is not None and test_err < best:
            best = test_err
            checkpoint.save(model, checkpoint_path)
        if on_epoch is not None:
            on_epoch(rec)
    return history
