"""Accuracy, ROC AUC and the k-fold cross-validation harness."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, TextIO

import numpy as np
from scipy.stats import rankdata

from .dataset import Dataset, split_folds
from .dgcnn import DgcnnConfig, History, predict, train

log = logging.getLogger(__name__)


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    if scores.size == 0:
        raise ValueError("empty input")
    return scores, labels


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of correct decisions; a score equal to the threshold counts as positive."""
    scores, labels = _check(scores, labels)
    return float(np.mean((scores >= threshold) == (labels == 1)))


def auc_roc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Mann-Whitney form on average ranks.
    """
    scores, labels = _check(scores, labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def confusion(scores, labels, threshold: float = 0.5) -> dict[str, int]:
    scores, labels = _check(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1
    return {
        "tp": int(np.sum(predicted & actual)),
        "fp": int(np.sum(predicted & ~actual)),
        "tn": int(np.sum(~predicted & ~actual)),
        "fn": int(np.sum(~predicted & actual)),
    }


@dataclass
class FoldResult:
    fold: int
    train_size: int
    test_size: int
    accuracy: float
    auc: float
    counts: dict[str, int]
    train_seconds: float
    history: History = field(repr=False, default_factory=History)
    scores: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    labels: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass
class EvalReport:
    folds: list[FoldResult]
    dataset_size: int
    seconds: float = 0.0

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds]))

    @property
    def mean_auc(self) -> float:
        return float(np.mean([f.auc for f in self.folds]))

    @property
    def pooled_accuracy(self) -> float:
        return accuracy(np.concatenate([f.scores for f in self.folds]), np.concatenate([f.labels for f in self.folds]))

    @property
    def pooled_auc(self) -> float:
        return auc_roc(np.concatenate([f.scores for f in self.folds]), np.concatenate([f.labels for f in self.folds]))

    @property
    def mean_train_seconds(self) -> float:
        return float(np.mean([f.train_seconds for f in self.folds]))

    def write_csv(self, sink: TextIO, case: str = "1") -> None:
        """One row per fold, then a mean row and a pooled row."""
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["case", "fold", "D", "D_trn", "D_tst", "ACC_pct", "AUC", "train_minutes", "tp", "fp", "tn", "fn"])
        for f in self.folds:
            c = f.counts
            writer.writerow([
                case, f.fold, self.dataset_size, f.train_size, f.test_size,
                f"{100 * f.accuracy:.2f}", f"{f.auc:.4f}", f"{f.train_seconds / 60:.3f}",
                c["tp"], c["fp"], c["tn"], c["fn"],
            ])
        first = self.folds[0]
        writer.writerow([
            case, "mean", self.dataset_size, first.train_size, first.test_size,
            f"{100 * self.mean_accuracy:.2f}", f"{self.mean_auc:.4f}", f"{self.mean_train_seconds / 60:.3f}",
            "", "", "", "",
        ])
        writer.writerow([
            case, "pooled", self.dataset_size, first.train_size, first.test_size,
            f"{100 * self.pooled_accuracy:.2f}", f"{self.pooled_auc:.4f}", f"{self.seconds / 60:.3f}",
            "", "", "", "",
        ])


def fold_seeds(master: int, folds: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(folds)]


def cross_validate(
    dataset: Dataset,
    folds: int,
    config: DgcnnConfig,
    seed: int = 0,
    monitor_test: bool = True,
    on_fold: Callable[[FoldResult], None] | None = None,
) -> EvalReport:
    """Train one model per stratified fold and score it on the held-out part.

    With ``monitor_test`` the test fold is scored after every epoch for the
    learning curve; it is never used to pick epochs or stop training.
    """
    started = time.perf_counter()
    results = []
    splits = split_folds(dataset, folds, seed)
    for k, ((train_set, test_set), fold_seed) in enumerate(zip(splits, fold_seeds(seed, folds)), start=1):
        t0 = time.perf_counter()
        model, history = train(train_set, replace(config, seed=fold_seed), monitor_set=test_set if monitor_test else None)
        elapsed = time.perf_counter() - t0
        scores = predict(model, test_set.patterns)
        labels = test_set.labels
        result = FoldResult(
            k,
            len(train_set),
            len(test_set),
            accuracy(scores, labels),
            auc_roc(scores, labels),
            confusion(scores, labels),
            elapsed,
            history,
            scores,
            labels,
        )
        log.info("fold %d: acc %.3f auc %.3f (%.0f s)", k, result.accuracy, result.auc, elapsed)
        results.append(result)
        if on_fold is not None:
            on_fold(result)
    return EvalReport(results, len(dataset), time.perf_counter() - started)
