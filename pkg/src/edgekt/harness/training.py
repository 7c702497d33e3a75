"""Supervised training loop and the data plumbing shared by CLI commands."""

from dataclasses import dataclass

import numpy as np

from .. import datapipe
from ..errors import ConfigError, NumericError
from ..gradcore import ops
from ..gradcore.optim import LRSchedule, Optimizer
from ..metrics import best_epoch, convergence_epoch, evaluate_sets
from .config import derive_seed


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    steps: int
    loss: float
    accuracy: dict


@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int
    convergence_epoch: int
    final: dict


def schedule_from(cfg):
    t = cfg.section("train")
    kind = {"step-drop": "step"}.get(t["schedule"], t["schedule"])
    return LRSchedule(kind, t["lr"], t["epochs"], factor=t["decay_factor"],
                      drops=t["drop_epochs"], drop_factor=t["drop_factor"])


def augment_from(cfg):
    d = cfg.section("data")
    if not (d["augment_crop"] or d["augment_flip"] or d["augment_cutout"]):
        return None
    size = d["image_size"]
    return datapipe.AugmentConfig(
        pad_pixels=d["pad_pixels"], crop=(size, size), flip_prob=d["flip_prob"],
        cutout=(d["cutout_size"], d["cutout_size"]), crop_enabled=d["augment_crop"],
        flip_enabled=d["augment_flip"], cutout_enabled=d["augment_cutout"],
    ).validate((3, size, size))


def load_data(cfg, data_dir=None):
    """Return (standardized images, labels, class_count, SplitPlan)."""
    d = cfg.section("data")
    if d["source"] == "synthetic":
        ds = datapipe.synth_dataset(d["classes"], d["per_class"], d["image_size"], d["data_seed"])
        plan = datapipe.make_splits(ds.labels, ds.class_count, d["protocol"], d["val_fraction"],
                                    d["test_fraction"], d["data_seed"], d["new_classes"] or None,
                                    d["seen_classes"] or None)
    elif d["source"] == "cifar10":
        if not data_dir:
            raise ConfigError("cifar10 source needs --data <dir>")
        train, test = datapipe.load_cifar10_bin(data_dir, strict=False)
        ds = datapipe.Dataset(np.concatenate([train.images, test.images]),
                              np.concatenate([train.labels, test.labels]), 10, "cifar10")
        inner = datapipe.make_splits(train.labels, 10, d["protocol"], d["val_fraction"], 0.0,
                                     d["data_seed"], d["new_classes"] or None,
                                     d["seen_classes"] or None)
        plan = datapipe.SplitPlan(inner.protocol, inner.train, inner.val,
                                  np.arange(len(train), len(ds)), ds.labels, inner.category_sets,
                                  inner.seed)
    else:
        raise ConfigError(f"unknown data source {d['source']!r}")
    return datapipe.standardize(ds.images), ds.labels, ds.class_count, plan


def eval_splits(images, labels, plan, splits=("val", "test")):
    sets = {k: v for k, v in plan.category_sets.items() if k != "all"}
    return {s: (images[getattr(plan, s)], labels[getattr(plan, s)], sets) for s in splits}


def restrict_classes(indices, labels, classes):
    if not classes:
        return indices
    return indices[np.isin(labels[indices], np.asarray(classes))]


def fit_supervised(model, images, labels, eval_sets, cfg, seed, log=None):
    """Train every parameter with categorical cross entropy.

    The returned model is a copy taken at the epoch with the best overall
    validation accuracy (the earliest such epoch).
    """
    t = cfg.section("train")
    if t["loss"] != "cross-entropy":
        raise ConfigError(f"unsupported supervised loss {t['loss']!r}")
    model.set_trainable(None)
    if t["epochs"] == 0:
        acc = {(s, k): v for s, (x, y, sets) in eval_sets.items()
               for k, v in evaluate_sets(model, x, y, sets).items()}
        return TrainResult(model.clone(), [], -1, -1, acc)
    schedule = schedule_from(cfg)
    aug = augment_from(cfg)
    opt = Optimizer(model.parameters(), t["optimizer"], lr=t["lr"], momentum=t["momentum"],
                    weight_decay=t["weight_decay"])
    history = []
    best_acc, best_model = -1.0, model.clone()
    steps = 0
    for epoch in range(t["epochs"]):
        lr = schedule.rate(epoch)
        total, n = 0.0, 0
        for batch in datapipe.batches(images, labels, t["batch_size"],
                                      derive_seed(seed, f"epoch{epoch}"), aug):
            opt.zero_grad()
            res = model.forward(batch.images, train=True)
            loss = ops.cross_entropy(res.logits, batch.labels)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step(lr)
            steps += 1
            total += value * len(batch.indices)
            n += len(batch.indices)
        acc = {(s, k): v for s, (x, y, sets) in eval_sets.items()
               for k, v in evaluate_sets(model, x, y, sets).items()}
        history.append(EpochMetrics(epoch, lr, steps, total / max(n, 1), acc))
        if log is not None:
            log(f"epoch={epoch} lr={lr:.6g} loss={total / max(n, 1):.6g} "
                f"val={acc[('val', 'all')].percentage:.2f} test={acc[('test', 'all')].percentage:.2f}")
        val = acc[("val", "all")].percentage
        if val > best_acc:
            best_acc, best_model = val, model.clone()
    vals = [h.accuracy[("val", "all")].percentage for h in history]
    b = best_epoch(vals)
    return TrainResult(best_model, history, b, convergence_epoch(vals), history[b].accuracy)
