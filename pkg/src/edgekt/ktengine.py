"""Selective layer-wise knowledge transfer from a teacher to a compressed student.

Per batch, every (teacher block, student block) pair inside a group is scored
by the cosine similarity of their l2-normalized outputs (student maps are
zero-padded to the teacher's channel count first) and the best pair per
group is mapped.  The student then minimizes

    loss = l1 * J1 + l2 * sum_b Jb + l3 * J3

where J1 is the Euclidean distance between final fully-connected outputs,
Jb the distance between the mapped normalized block outputs and J3 the
label term.  Only the last conv layer of each student group (and optionally
the classifier head) is updated.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import archspec
from .errors import ConfigError, DataError, NumericError, ShapeError
from .gradcore import ops
from .gradcore.optim import Optimizer
from .gradcore.tensor import Tensor, no_grad
from .metrics import best_epoch, convergence_epoch, evaluate_sets

MODES = ("incremental", "unseen")
J3_FORMS = ("two-sided", "categorical")
FLATTEN = ("batch", "sample")


@dataclass(frozen=True)
class KTConfig:
    """Loss weights and update policy.

    ``lambda3`` defaults to 1 in incremental mode and 0 in unseen mode, where
    any positive value is rejected.  ``train_head`` defaults to on for
    incremental and off for unseen mode.  ``student_bn`` selects batchnorm
    behaviour of the student during transfer ("eval" keeps running
    statistics fixed everywhere).
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float | None = None
    mode: str = "incremental"
    train_head: bool | None = None
    remap_every_batch: bool = True
    j3_form: str = "two-sided"
    flatten: str = "batch"
    student_bn: str = "eval"
    train_all: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown KT mode {self.mode!r}")
        if self.j3_form not in J3_FORMS:
            raise ConfigError(f"unknown j3_form {self.j3_form!r}")
        if self.flatten not in FLATTEN:
            raise ConfigError(f"unknown flatten {self.flatten!r}")
        if self.student_bn not in ("eval", "train"):
            raise ConfigError(f"unknown student_bn {self.student_bn!r}")
        if self.mode == "unseen":
            if self.lambda3:
                raise ConfigError("unseen mode is label-free; lambda3 must be 0")
            object.__setattr__(self, "lambda3", 0.0)
        elif self.lambda3 is None:
            object.__setattr__(self, "lambda3", 1.0)
        if self.train_head is None:
            object.__setattr__(self, "train_head", self.mode == "incremental")
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if min(lams) < 0 or max(lams) <= 0:
            raise ConfigError(f"loss weights must be non-negative with one positive, got {lams}")


@dataclass(frozen=True)
class GroupMap:
    group: int
    teacher_block: int
    student_block: int
    similarity: float
    fallback: bool = False


@dataclass(frozen=True)
class BlockMapping:
    pairs: tuple

    def text(self):
        return ";".join(f"{p.teacher_block}:{p.student_block}" for p in self.pairs)


@dataclass
class KTLossBreakdown:
    j1: float
    jb: list
    j3: float
    total: float
    mapping: BlockMapping
    loss: Tensor = field(default=None, repr=False)

    def log_line(self, step):
        jb = ",".join(f"{v:.6g}" for v in self.jb)
        return (f"step={step} group_maps={self.mapping.text()} j1={self.j1:.6g} jb={jb} "
                f"j3={self.j3:.6g} loss={self.total:.6g}")


# ---------------------------------------------------------------------------
# block similarity and mapping
# ---------------------------------------------------------------------------

def pad_channels(student_map, target_channels):
    return ops.pad_channels(student_map, target_channels)


def _normalized(x, per_sample):
    return ops.l2_normalize_flat(x, per_sample=per_sample)


def cosine_sim(teacher_out, student_out, per_sample=False):
    """Cosine similarity of the normalized, channel-padded block outputs.

    Returns ``-inf`` when either side is all zero so the pair is never chosen.
    """
    t = np.asarray(teacher_out.data if isinstance(teacher_out, Tensor) else teacher_out)
    s = np.asarray(student_out.data if isinstance(student_out, Tensor) else student_out)
    if t.shape[0] != s.shape[0] or t.shape[2:] != s.shape[2:]:
        raise ShapeError("cosine_sim", t.shape, s.shape, detail="batch and spatial dims must match")
    with no_grad():
        qt, dt = _normalized(t.astype(np.float64), per_sample)
        qs, ds = _normalized(ops.pad_channels(s.astype(np.float64), t.shape[1]), per_sample)
    if dt or ds:
        return -math.inf
    sim = (qt.data * qs.data).sum(axis=-1)
    sim = float(sim.mean()) if per_sample else float(sim)
    return min(1.0, max(-1.0, sim))


def _by_group(taps):
    groups = {}
    for tap in taps:
        groups.setdefault(tap.group, []).append(tap)
    return groups


def select_mappings(teacher_taps, student_taps, per_sample=False):
    """Best (teacher block, student block) pair per group by cosine similarity.

    Ties go to the smallest teacher index, then the smallest student index.
    If every pair in a group is degenerate the last blocks are paired and the
    entry is flagged as a fallback.
    """
    tg, sg = _by_group(teacher_taps), _by_group(student_taps)
    if sorted(tg) != sorted(sg):
        raise ShapeError("select_mappings", (len(tg),), (len(sg),), detail="group counts differ")
    pairs = []
    for g in sorted(tg):
        best = None
        for tt in tg[g]:
            for st in sg[g]:
                sim = cosine_sim(tt.output, st.output, per_sample)
                if best is None or sim > best[0]:
                    best = (sim, tt.block, st.block)
        if best[0] == -math.inf:
            pairs.append(GroupMap(g, tg[g][-1].block, sg[g][-1].block, -math.inf, True))
        else:
            pairs.append(GroupMap(g, best[1], best[2], best[0]))
    return BlockMapping(tuple(pairs))


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def loss_j1(teacher_fc, student_fc):
    """Euclidean distance between teacher and student final FC outputs (logits)."""
    t = teacher_fc.data if isinstance(teacher_fc, Tensor) else np.asarray(teacher_fc)
    if t.shape != student_fc.shape:
        raise ShapeError("loss_j1", t.shape, student_fc.shape)
    return ops.euclidean_distance(student_fc, t)


def loss_jb(teacher_q, student_q):
    """Euclidean distance between mapped normalized block outputs (in [0, 2])."""
    return ops.euclidean_distance(student_q, teacher_q)


def loss_j3(labels, student_probs, form="two-sided"):
    """Label term on softmax outputs, negated so that it is minimized."""
    labels = np.asarray(labels)
    c = student_probs.shape[1]
    if labels.ndim == 2:
        onehot = labels
        if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
            raise DataError("loss_j3 expects one-hot label rows")
    else:
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
            raise DataError(f"labels outside [0, {c})")
        onehot = ops.one_hot(labels, c, dtype=student_probs.dtype)
    if form == "categorical":
        return ops.categorical_log_loss(student_probs, onehot)
    return ops.two_sided_log_loss(student_probs, onehot)


def total_loss(config, j1, jb_terms, j3=None):
    """Weighted sum of the terms; ``j3`` is ignored in unseen mode."""
    terms = [j1, *jb_terms]
    weights = [config.lambda1] + [config.lambda2] * len(jb_terms)
    j3_value = 0.0
    if config.mode == "incremental":
        if j3 is None:
            raise DataError("incremental mode needs labels for the J3 term")
        terms.append(j3)
        weights.append(config.lambda3)
        j3_value = float(j3.data)
    loss = ops.weighted_sum(weights, terms)
    return KTLossBreakdown(float(j1.data), [float(t.data) for t in jb_terms], j3_value,
                           float(loss.data), None, loss)


# ---------------------------------------------------------------------------
# selective update
# ---------------------------------------------------------------------------

def last_conv_per_group(spec):
    names = []
    for g, group in enumerate(spec.groups):
        b = len(group.blocks) - 1
        names.append(archspec.layer_name(g, b, len(group.blocks[-1].layers) - 1))
    return names


def trainable_mask(model, train_head=False):
    """Parameter names updated by transfer: last conv of every group (+ head)."""
    names = set()
    for lname in last_conv_per_group(model.spec):
        for suffix in (".weight", ".bias", ".bn.scale", ".bn.shift"):
            if lname + suffix in model.params:
                names.add(lname + suffix)
    if train_head:
        names |= {"head.weight", "head.bias"}
    return names


def _bn_frozen_layers(model, mask, config):
    """Layers whose batch norm keeps using running statistics in train mode."""
    if config.student_bn == "eval":
        return None
    bn_layers = {n.rsplit(".bn.", 1)[0] for n in model.params if ".bn." in n}
    return frozenset(n for n in bn_layers if f"{n}.bn.scale" not in mask)


def prepare_student(student, config):
    """Apply the update mask to ``student``; returns the masked names."""
    mask = set(student.params) if config.train_all else trainable_mask(student, config.train_head)
    student.set_trainable(mask)
    return mask


def kt_loss(teacher, student, images, labels, config, mapping=None, frozen_bn=None):
    """Build the transfer loss graph for one batch without touching any weights.

    The teacher runs in inference mode and is never differentiated.  Pass the
    previous ``mapping`` to reuse it when ``remap_every_batch`` is off.  The
    returned breakdown carries the differentiable ``loss`` and the mapping used.
    """
    per_sample = config.flatten == "sample"
    with no_grad():
        tres = teacher.forward(images, train=False)
    if config.student_bn == "eval":
        sres = student.forward(images, train=False)
    else:
        sres = student.forward(images, train=True, frozen_bn=frozen_bn or frozenset())
    if config.remap_every_batch or mapping is None:
        mapping = select_mappings(tres.taps, sres.taps, per_sample)
    tmap = {(t.group, t.block): t.output for t in tres.taps}
    smap = {(t.group, t.block): t.output for t in sres.taps}
    j1 = loss_j1(tres.logits, sres.logits)
    jbs = []
    for pair in mapping.pairs:
        t_out = tmap[(pair.group, pair.teacher_block)]
        s_out = smap[(pair.group, pair.student_block)]
        qt, _ = _normalized(t_out.data, per_sample)
        qs, _ = _normalized(ops.pad_channels(s_out, t_out.shape[1]), per_sample)
        jbs.append(loss_jb(qt.data, qs))
    j3 = None
    if config.mode == "incremental":
        if labels is None:
            raise DataError("incremental transfer needs labels")
        j3 = loss_j3(labels, ops.softmax_rows(sres.logits), config.j3_form)
    breakdown = total_loss(config, j1, jbs, j3)
    breakdown.mapping = mapping
    return breakdown


def kt_step(teacher, student, images, labels, config, optimizer, lr=None, mapping=None,
            frozen_bn=None):
    """One transfer step (loss, backward, masked update); returns the breakdown."""
    breakdown = kt_loss(teacher, student, images, labels, config, mapping, frozen_bn)
    if not np.isfinite(breakdown.total):
        raise NumericError(f"non-finite transfer loss {breakdown.total}")
    optimizer.zero_grad()
    breakdown.loss.backward()
    optimizer.step(lr)
    return breakdown


# ---------------------------------------------------------------------------
# training procedures
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    steps: int
    loss: float
    j1: float
    jb: float
    j3: float
    accuracy: dict


@dataclass
class KTResult:
    student: archspec.Network
    history: list
    best_epoch: int
    convergence_epoch: int
    final: dict
    log: list


def _accuracy_row(model, eval_sets):
    row = {}
    for split, (images, labels, sets) in eval_sets.items():
        for name, acc in evaluate_sets(model, images, labels, sets).items():
            row[(split, name)] = acc
    return row


def run_transfer(teacher, student, images, labels, config, schedule, epochs, batch_size,
                 seed, eval_sets, optimizer_kind="sgd-nesterov", momentum=0.9, weight_decay=0.0,
                 augment_config=None, log=None):
    """Shared loop behind :func:`train_incremental` and :func:`train_unseen`.

    ``eval_sets`` maps a split name to ``(images, labels, category_sets)``;
    the ``val`` split's overall accuracy drives model selection.
    """
    from .datapipe import batches

    student = student.clone()
    if epochs == 0:
        return KTResult(student, [], -1, -1, {}, [])
    mask = prepare_student(student, config)
    frozen_bn = _bn_frozen_layers(student, mask, config)
    opt = Optimizer([student.params[n] for n in sorted(mask)], optimizer_kind, lr=schedule.base,
                    momentum=momentum, weight_decay=weight_decay)
    history, lines = [], []
    best_acc, best_model, mapping = -1.0, student.clone(), None
    step = 0
    for epoch in range(epochs):
        lr = schedule.rate(epoch)
        sums = np.zeros(4)
        n_batches = 0
        for batch in batches(images, labels, batch_size, seed * 1_000_003 + epoch, augment_config):
            bd = kt_step(teacher, student, batch.images, batch.labels, config, opt, lr,
                         mapping, frozen_bn)
            mapping = bd.mapping
            step += 1
            line = bd.log_line(step)
            lines.append(line)
            if log is not None:
                log(line)
            sums += (bd.total, bd.j1, sum(bd.jb), bd.j3)
            n_batches += 1
        acc = _accuracy_row(student, eval_sets)
        means = sums / max(n_batches, 1)
        history.append(EpochRecord(epoch, lr, step, *means, acc))
        val = acc[("val", "all")].percentage
        if val > best_acc:
            best_acc, best_model = val, student.clone()
    vals = [h.accuracy[("val", "all")].percentage for h in history]
    b = best_epoch(vals)
    best_model.set_trainable(None)
    return KTResult(best_model, history, b, convergence_epoch(vals), history[b].accuracy, lines)


def train_incremental(teacher, student, new_images, new_labels, config, schedule, epochs,
                      batch_size, seed, eval_sets, **kw):
    """Learn new categories from ``new_images`` while the teacher guards old ones.

    ``config.mode`` must be ``incremental``.  Labels of the new data must
    belong to classes the student head covers.
    """
    if config.mode != "incremental":
        raise ConfigError("train_incremental needs an incremental-mode KTConfig")
    c = student.spec.class_count
    if new_labels is None or len(new_labels) != len(new_images):
        raise DataError("incremental transfer needs one label per image")
    if len(new_labels) and (new_labels.min() < 0 or new_labels.max() >= c):
        raise DataError(f"new-category labels fall outside the student's {c} classes")
    if teacher.spec.class_count != c:
        raise DataError(f"teacher has {teacher.spec.class_count} classes, student {c}")
    return run_transfer(teacher, student, new_images, new_labels, config, schedule, epochs,
                        batch_size, seed, eval_sets, **kw)


def train_unseen(teacher, student, transfer_images, config, schedule, epochs, batch_size, seed,
                 eval_sets, **kw):
    """Label-free transfer: only J1 and the block terms drive the update.

    ``transfer_images`` is a standardized image array, or a Dataset whose
    raw images are standardized and whose labels are dropped, so no label
    reaches the loss path.
    """
    if config.mode != "unseen":
        raise ConfigError("train_unseen needs an unseen-mode KTConfig")
    if hasattr(transfer_images, "images"):
        from .datapipe import standardize

        images = standardize(transfer_images.images)
    else:
        images = transfer_images
    if teacher.spec.class_count != student.spec.class_count:
        raise DataError("teacher and student heads differ in class count")
    return run_transfer(teacher, student, images, None, config, schedule, epochs, batch_size,
                        seed, eval_sets, **kw)
