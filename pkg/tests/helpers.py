"""Small models and data shared by several test modules."""

import numpy as np

from edgekt import archspec


def tiny_teacher_spec(classes=4, size=8):
    return archspec.resnet_spec((4, 6, 8), 2, classes, stem_width=4, input_size=size, name="t")


def tiny_student_spec(classes=4, size=8):
    spec = archspec.resnet_spec((3, 5, 6), 1, classes, stem_width=3, input_size=size, name="s")
    return archspec.fit_shortcuts(spec)


def tiny_pair(seed=0, classes=4, size=8):
    t = archspec.build_network(tiny_teacher_spec(classes, size), seed)
    s = archspec.build_network(tiny_student_spec(classes, size), seed + 1)
    rng = np.random.default_rng(seed + 100)
    for m in (t, s):  # non-trivial running statistics
        for name in m.buffers:
            lo, hi = (0.5, 1.5) if name.endswith("var") else (-0.2, 0.2)
            m.buffers[name] = rng.uniform(lo, hi, m.buffers[name].shape).astype(np.float32)
    return t, s


def images(n, seed=0, size=8):
    return np.random.default_rng(seed).standard_normal((n, 3, size, size)).astype(np.float32)


def random_resnet_spec(rng, classes=3, size=8, groups=3):
    widths = tuple(int(w) for w in rng.integers(2, 7, groups))
    blocks = int(rng.integers(1, 4))
    return archspec.resnet_spec(widths, blocks, classes, stem_width=int(rng.integers(2, 6)),
                                input_size=size)
