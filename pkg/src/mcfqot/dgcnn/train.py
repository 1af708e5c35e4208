"""Mini-batch training loop, learning-curve history and the admission decision."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from ..dataset import Dataset, Pattern
from .model import (
    DgcnnConfig,
    DgcnnModel,
    Graph,
    bce,
    fit_normalizer,
    forward,
    init_model,
    loss_and_gradients,
    predict_graphs,
    prepare,
)
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float | None = None
    val_loss: float | None = None
    monitor_acc: float | None = None


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    seconds: float = 0.0

    def __len__(self) -> int:
        return len(self.epochs)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.epochs], dtype=float)

    def write_csv(self, sink: TextIO) -> None:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["epoch", "loss", "train_acc", "val_acc"])
        for r in self.epochs:
            # a monitored test fold stands in for val_acc when no validation split is used
            val = r.val_acc if r.val_acc is not None else r.monitor_acc
            writer.writerow([r.epoch, f"{r.loss:.6f}", f"{r.train_acc:.6f}", "" if val is None else f"{val:.6f}"])


def _acc(scores: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean((scores >= 0.5) == (labels == 1)))


def _split_validation(patterns: list[Pattern], fraction: float, rng: np.random.Generator):
    labels = np.array([p.label for p in patterns])
    val = []
    for label in (0, 1):
        members = np.flatnonzero(labels == label)
        take = int(round(fraction * len(members)))
        val.extend(rng.choice(members, size=take, replace=False).tolist())
    val_set = set(val)
    train = [p for k, p in enumerate(patterns) if k not in val_set]
    return train, [patterns[k] for k in sorted(val_set)]


def train(
    train_set: Dataset | Sequence[Pattern],
    config: DgcnnConfig = DgcnnConfig(),
    validation_set: Dataset | Sequence[Pattern] | None = None,
    monitor_set: Dataset | Sequence[Pattern] | None = None,
    model: DgcnnModel | None = None,
) -> tuple[DgcnnModel, History]:
    """Fit a DGCNN with ADAM.

    ``validation_set`` drives early stopping and best-model selection. When it
    is absent and ``config.val_fraction`` > 0, a stratified slice of the
    training patterns is held out instead. ``monitor_set`` is only scored per
    epoch for the learning curve and never influences training.
    """
    patterns = list(train_set)
    if not patterns:
        raise ValueError("training set is empty")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    validation = list(validation_set) if validation_set is not None else []
    if not validation and config.val_fraction > 0:
        patterns, validation = _split_validation(patterns, config.val_fraction, rng)

    n = patterns[0].n
    if model is None:
        model = init_model(config, n, seed=config.seed)
        fit_normalizer(model, patterns)
    graphs = [prepare(model, p) for p in patterns]
    labels = np.array([g.label for g in graphs])
    val_graphs = [prepare(model, p) for p in validation]
    val_labels = np.array([g.label for g in val_graphs])
    mon_graphs = [prepare(model, p) for p in monitor_set] if monitor_set is not None else []
    mon_labels = np.array([g.label for g in mon_graphs])

    history = History()
    opt = AdamState()
    best_loss, best_model, waited = np.inf, None, 0
    started = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(graphs))
        losses, correct = [], 0
        for start in range(0, len(order), config.batch_size):
            batch = [graphs[i] for i in order[start : start + config.batch_size]]
            loss, grads, p = loss_and_gradients(model, batch, rng=rng)
            adam_step(model.params, grads, opt, config.learning_rate, config.beta1, config.beta2, config.epsilon)
            losses.append(loss * len(batch))
            correct += int(np.sum((p >= 0.5) == (labels[order[start : start + config.batch_size]] == 1)))
        record = EpochRecord(epoch, float(np.sum(losses) / len(graphs)), correct / len(graphs))
        if val_graphs:
            p = predict_graphs(model, val_graphs)
            record.val_acc = _acc(p, val_labels)
            record.val_loss = bce(p, val_labels)
        if mon_graphs:
            record.monitor_acc = _acc(predict_graphs(model, mon_graphs), mon_labels)
        history.epochs.append(record)
        log.debug("epoch %d loss %.4f acc %.3f val %s", epoch, record.loss, record.train_acc, record.val_acc)

        if val_graphs:
            if record.val_loss < best_loss:
                best_loss, best_model, waited = record.val_loss, model.copy(), 0
                history.best_epoch = epoch
            else:
                waited += 1
                if config.patience and waited >= config.patience:
                    break
    history.seconds = time.perf_counter() - started
    if best_model is not None:
        model = best_model
    return model, history


def predict(model: DgcnnModel, patterns: Sequence[Pattern]) -> np.ndarray:
    return predict_graphs(model, [prepare(model, p) for p in patterns])


def classify_state(model: DgcnnModel, pattern: Pattern | Graph, threshold: float = 0.5) -> str:
    """Admission decision; raising ``threshold`` above 0.5 acts as a safety margin."""
    return FEASIBLE if forward(model, pattern) >= threshold else INFEASIBLE
