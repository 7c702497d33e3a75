"""SGD with Nesterov momentum, Adam, and per-epoch learning-rate schedules."""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, MissingGradError

OPTIMIZER_KINDS = ("sgd-nesterov", "adam")
SCHEDULE_KINDS = ("cosine", "exponential", "step", "constant")


@dataclass
class OptimizerState:
    kind: str
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    buffers: dict = field(default_factory=dict)


class Optimizer:
    """Applies updates to the trainable members of ``params``.

    Weight decay is added to the gradient (L2 form) before the momentum or
    moment updates, matching the classic SGD/Adam formulations.  Parameters
    with ``trainable=False`` are skipped entirely.
    """

    def __init__(self, params, kind="sgd-nesterov", lr=0.1, momentum=0.9,
                 weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        if kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer kind {kind!r}; expected one of {OPTIMIZER_KINDS}")
        if lr <= 0 or weight_decay < 0 or not 0 <= momentum < 1:
            raise ConfigError(f"invalid optimizer hyperparameters lr={lr} momentum={momentum} "
                              f"weight_decay={weight_decay}")
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("optimizer received duplicate parameter names")
        self.state = OptimizerState(kind, lr, momentum, weight_decay, tuple(betas), eps)

    @property
    def steps(self):
        return self.state.step

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        st = self.state
        lr = st.lr if lr is None else lr
        active = [p for p in self.params if p.trainable]
        for p in active:
            if p.grad is None:
                raise MissingGradError(p.name)
        st.step += 1
        for p in active:
            g = p.grad
            if st.weight_decay:
                g = g + st.weight_decay * p.data
            if st.kind == "sgd-nesterov":
                buf = st.buffers.get(p.name)
                if buf is None:
                    buf = np.zeros_like(p.data)
                    st.buffers[p.name] = buf
                buf *= st.momentum
                buf += g
                update = g + st.momentum * buf
                p.data -= (lr * update).astype(p.dtype, copy=False)
            else:
                b1, b2 = st.betas
                m, v = st.buffers.get(p.name, (None, None))
                if m is None:
                    m, v = np.zeros_like(p.data), np.zeros_like(p.data)
                    st.buffers[p.name] = (m, v)
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                mhat = m / (1 - b1 ** st.step)
                vhat = v / (1 - b2 ** st.step)
                p.data -= (lr * mhat / (np.sqrt(vhat) + st.eps)).astype(p.dtype, copy=False)


@dataclass(frozen=True)
class LRSchedule:
    kind: str
    base: float
    total: int
    factor: float = 0.98
    drops: tuple = ()
    drop_factor: float = 0.1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.base <= 0 or self.total < 0:
            raise ConfigError(f"schedule needs base > 0 and total >= 0, got {self.base}, {self.total}")
        if self.kind == "exponential" and self.factor <= 0:
            raise ConfigError("exponential schedule needs factor > 0")
        if self.kind == "step" and self.drop_factor <= 0:
            raise ConfigError("step schedule needs drop_factor > 0")

    def rate(self, epoch):
        if not 0 <= epoch < self.total:
            raise ValueError(f"epoch {epoch} outside schedule range [0, {self.total})")
        if self.kind == "cosine":
            return self.base * 0.5 * (1 + math.cos(math.pi * epoch / self.total))
        if self.kind == "exponential":
            return self.base * self.factor ** epoch
        if self.kind == "step":
            passed = sum(1 for d in self.drops if epoch >= d)
            return self.base * self.drop_factor ** passed
        return self.base


def schedule_rate(schedule, epoch):
    return schedule.rate(epoch)
