"""Accuracy bookkeeping shared by the training loops and the CLI."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CategoryAccuracy:
    category_set: str
    correct: int
    total: int

    @property
    def percentage(self):
        return 100.0 * self.correct / self.total if self.total else 0.0


def category_accuracy(predictions, labels, classes=None, name="all"):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if classes is not None:
        keep = np.isin(labels, np.asarray(classes))
        predictions, labels = predictions[keep], labels[keep]
    return CategoryAccuracy(name, int(np.count_nonzero(predictions == labels)), int(len(labels)))


def evaluate_sets(model, images, labels, category_sets, batch_size=256):
    """Top-1 accuracy for each named class set plus ``all`` (sample-weighted)."""
    preds = model.predict(images, batch_size=batch_size)
    out = {"all": category_accuracy(preds, labels, None, "all")}
    for name, classes in category_sets.items():
        if name != "all":
            out[name] = category_accuracy(preds, labels, classes, name)
    return out


def best_epoch(val_accuracies):
    """Index of the highest validation accuracy; the earliest epoch wins ties."""
    return int(np.argmax(np.asarray(val_accuracies))) if len(val_accuracies) else -1


def convergence_epoch(val_accuracies, margin=0.1):
    """First epoch whose validation accuracy is within ``margin`` points of the best."""
    if not len(val_accuracies):
        return -1
    acc = np.asarray(val_accuracies, dtype=np.float64)
    return int(np.flatnonzero(acc >= acc.max() - margin)[0])
