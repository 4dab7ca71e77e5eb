"""Metrics, k-fold cross-validation, learning curves and representation export."""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import _kernels
from .data import Dataset, kfold
from .trainer import EpochTrace, MGBDTModel, TrainConfig, encode, fit, predict_model


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} predictions vs {y.shape} labels")
    if p.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(p == y))


def mse(outputs, targets) -> float:
    o = np.asarray(outputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if o.shape != t.shape:
        raise ValueError(f"shape mismatch: {o.shape} vs {t.shape}")
    if o.size == 0:
        raise ValueError("mse of an empty set is undefined")
    return float(np.mean((o - t) ** 2))


@dataclass(frozen=True)
class CVReport:
    """Per-fold scores with their mean and population standard deviation."""

    fold_scores: tuple[float, ...]
    mean: float
    std: float
    metric: str = "accuracy"

    @classmethod
    def from_scores(cls, scores, metric: str = "accuracy") -> "CVReport":
        s = np.asarray(scores, dtype=np.float64)
        return cls(tuple(float(v) for v in s), float(s.mean()), float(s.std()), metric)

    @property
    def k(self) -> int:
        return len(self.fold_scores)


# A train function takes (train set, structure, mode, config) and returns a predictor.
TrainFn = Callable[[Dataset, list, str, TrainConfig], Callable[[np.ndarray], np.ndarray]]


def mode_of(dataset: Dataset) -> str:
    if dataset.is_classification:
        return "classify"
    return "regress" if dataset.labels is not None else "autoencode"


def _default_train(train: Dataset, structure, mode: str, config: TrainConfig):
    model, _ = fit(train.features, train.labels, structure, mode, config)
    return lambda X: predict_model(model, X)


def fold_seeds(seed: int, k: int) -> list[int]:
    """Independent per-fold training seeds derived from the master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def run_cv(dataset: Dataset, structure, config: TrainConfig = TrainConfig(), k: int = 10,
           seed: int = 0, train_fn: TrainFn | None = None, workers: int = 1,
           mode: str | None = None) -> CVReport:
    """Train a fresh model per fold and score it on the held-out rows.

    Classification reports accuracy; other modes report reconstruction or
    regression mse. The mode defaults to the one implied by the labels.
    ``workers > 1`` trains folds concurrently.
    """
    train_fn = train_fn or _default_train
    mode = mode or mode_of(dataset)
    plan = kfold(dataset, k, seed)
    seeds = fold_seeds(seed, k)
    classify = mode == "classify"

    def one(fold):
        train = dataset.subset(plan.train_rows(fold))
        test = dataset.subset(plan.test_rows(fold))
        predictor = train_fn(train, list(structure), mode, replace(config, rng_seed=seeds[fold]))
        out = predictor(test.features)
        if classify:
            return accuracy(out, test.labels)
        if mode == "autoencode":
            return mse(out, test.features)
        return mse(out, test.labels.reshape(len(out), -1))

    if workers > 1 and not _kernels.concurrent_safe():
        warnings.warn("numba threading layer is not thread-safe; running folds sequentially")
        workers = 1
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            scores = list(pool.map(one, range(k)))
    else:
        scores = [one(f) for f in range(k)]
    return CVReport.from_scores(scores, "accuracy" if classify else "mse")


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def export_representation(model: MGBDTModel, dataset: Dataset, layer_index: int, path) -> None:
    """Write ``o_j`` for every row plus a label column, keeping row order."""
    rep = encode(model, dataset.features, layer_index)
    labels = dataset.labels
    cols = [f"h{i}" for i in range(rep.shape[1])] + [dataset.label_name or "label"]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i, row in enumerate(rep):
                if labels is None:
                    lab = ""
                elif dataset.is_classification:
                    lab = str(int(labels[i]))
                else:
                    lab = " ".join(repr(float(v)) for v in np.atleast_1d(labels[i]))
                w.writerow([repr(float(v)) for v in row] + [lab])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


CURVE_COLUMNS = ("epoch", "train_loss", "train_acc", "test_loss", "test_acc")


def write_curves(traces: list[EpochTrace], path) -> None:
    if not traces:
        raise ValueError("no epochs to write")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            for t in traces:
                w.writerow([t.epoch, _cell(t.train_loss), _cell(t.train_accuracy),
                            _cell(t.test_loss), _cell(t.test_accuracy)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
