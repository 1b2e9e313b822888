"""Mini-batch training loop with validation-based checkpoint selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import SignalDataset
from .engine import Execution
from .graph import ModelGraph
from .metrics import evaluate
from .optim import OptimizerState, optimize_step


@dataclass
class TrainSettings:
    epochs: int
    lr: float = 0.001
    batch_size: int = 128
    optimizer: str = "adam"
    seed: int = 0


@dataclass
class TrainResult:
    model: ModelGraph  # best-validation-epoch weights
    curve: list[tuple[int, str, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = 0.0
    epochs_run: int = 0


def train_model(
    model: ModelGraph,
    dataset: SignalDataset,
    settings: TrainSettings,
    track_test: bool = False,
) -> TrainResult:
    """Trains a clone of the model; the input graph is left untouched.

    The validation split picks the checkpoint epoch; per-epoch train/val
    (and optionally test) accuracies are recorded as curve rows.
    """
    work = model.clone()
    rng = np.random.default_rng(settings.seed)
    state = OptimizerState(lr=settings.lr, method=settings.optimizer)
    train_idx = dataset.indices("train")
    result = TrainResult(model=work.clone())
    best_val = -1.0
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(train_idx.size)
        correct = 0
        ex = Execution(work)
        for start in range(0, train_idx.size, settings.batch_size):
            sel = train_idx[order[start : start + settings.batch_size]]
            logits = ex.forward(dataset.samples[sel], training=True)
            ex.loss(dataset.labels[sel])
            ex.backward()
            optimize_step(state, work)
            correct += int((np.argmax(logits, axis=1) == dataset.labels[sel]).sum())
        train_acc = correct / train_idx.size
        val_acc, _ = evaluate(work, dataset, "val")
        result.curve.append((epoch, "train", train_acc))
        result.curve.append((epoch, "val", val_acc))
        if track_test:
            test_acc, _ = evaluate(work, dataset, "test")
            result.curve.append((epoch, "test", test_acc))
        if val_acc > best_val:
            best_val = val_acc
            result.model = work.clone()
            result.best_epoch = epoch
            result.best_val_acc = val_acc
        result.epochs_run = epoch
    return result
