"""Activation-sparsity filter pruning: keep-last-block depth cut, then width cut.

For every conv layer of the teacher, each filter's post-activation map is
scored by its fraction of exact zeros.  A filter whose fraction reaches the
threshold ``P`` counts as prunable for that image; the per-layer count is
averaged over ``M`` calibration images and floored, and the layer keeps
``n - floor(avg)`` filters (never fewer than one).  The student is then
re-initialized and retrained from scratch.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import archspec, kernels
from .errors import ConfigError, DataError, FormatError, SpecError
from .gradcore.tensor import no_grad


@dataclass(frozen=True)
class PruningConfig:
    threshold: float = 0.9
    sample_count: int = 128
    calibration_seed: int = 0
    batch_size: int = 64

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"pruning threshold must lie in [0, 1], got {self.threshold}")
        if self.sample_count < 1:
            raise ConfigError(f"sample_count must be >= 1, got {self.sample_count}")


@dataclass
class LayerSparsity:
    name: str
    filters: int
    avgc: float
    width: int
    fractions: np.ndarray = field(repr=False, default=None)


@dataclass
class SparsityReport:
    threshold: float
    sample_count: int
    layers: list

    def __getitem__(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def __contains__(self, name):
        return any(layer.name == name for layer in self.layers)

    def to_text(self, fractions=False):
        lines = [f"layer={l.name} n={l.filters} avgc={l.avgc!r} w={l.width}" for l in self.layers]
        if fractions:
            for l in self.layers:
                for m, row in enumerate(l.fractions):
                    vals = ",".join(f"{v:.6f}" for v in row)
                    lines.append(f"fractions layer={l.name} image={m} values={vals}")
        return "\n".join(lines) + "\n"


def parse_report(text):
    layers = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("fractions "):
            continue
        try:
            fields = dict(part.split("=", 1) for part in line.split())
            layers.append(LayerSparsity(fields["layer"], int(fields["n"]), float(fields["avgc"]),
                                        int(fields["w"])))
        except (ValueError, KeyError):
            raise FormatError(f"sparsity report line {lineno} is malformed: {line!r}") from None
    return SparsityReport(float("nan"), 0, layers)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def filter_zero_fraction(activation_map):
    """``1 - ||a||_0 / (h*w)``: the share of exactly-zero entries in one map."""
    a = np.asarray(activation_map)
    if a.size == 0:
        raise DataError("filter_zero_fraction: empty activation map")
    return 1.0 - np.count_nonzero(a) / a.size


def zero_fractions(acts):
    """(n, c) zero fractions for a (n, c, h, w) activation batch."""
    acts = np.asarray(acts)
    if acts.shape[2] * acts.shape[3] == 0:
        raise DataError("zero_fractions: empty activation maps")
    size = acts.shape[2] * acts.shape[3]
    return 1.0 - (size - kernels.zero_counts(acts)) / size


def count_prunable(layer_acts, threshold):
    """Number of filters of one image's (c, h, w) activations with zero fraction >= P."""
    fr = zero_fractions(np.asarray(layer_acts)[None])[0]
    return int(np.count_nonzero(fr >= threshold))


def calibration_indices(n_images, config):
    if n_images < config.sample_count:
        raise DataError(f"calibration needs {config.sample_count} images, dataset has {n_images}")
    rng = np.random.default_rng([config.calibration_seed, 0xCA1])
    return np.sort(rng.permutation(n_images)[:config.sample_count])


def average_prunable(model, images, config):
    """Per-layer mean prunable-filter count over ``M`` seeded calibration images.

    Runs the model in inference mode, so neither parameters nor batchnorm
    running statistics change.
    """
    idx = calibration_indices(len(images), config)
    names = model.conv_layer_names()
    fractions = {name: [] for name in names}
    with no_grad():
        for start in range(0, len(idx), config.batch_size):
            res = model.forward(images[idx[start:start + config.batch_size]], train=False, capture=True)
            for name in names:
                fractions[name].append(zero_fractions(res.activations[name]))
    layers = []
    for name in names:
        fr = np.concatenate(fractions[name])
        counts = np.count_nonzero(fr >= config.threshold, axis=1)
        # fixed-order integer sum, then one division
        avgc = int(counts.sum()) / len(counts)
        n = fr.shape[1]
        layers.append(LayerSparsity(name, n, avgc, reduced_width(n, avgc), fr))
    return SparsityReport(config.threshold, config.sample_count, layers)


def reduced_width(filters, avgc):
    return max(1, filters - math.floor(avgc))


# ---------------------------------------------------------------------------
# architecture surgery
# ---------------------------------------------------------------------------

def reduce_depth(spec):
    """Keep only the last block of every group.

    The retained block inherits the group's entry stride (set on its first
    layer) so each group still outputs the teacher's resolution; shortcuts
    that stop fitting become projections.
    """
    groups = []
    for g, group in enumerate(spec.groups):
        if not group.blocks:
            raise SpecError("group has no blocks", f"group.{g}")
        first, last = group.blocks[0], group.blocks[-1]
        if len(group.blocks) > 1:
            entry_stride = first.stride
            layers = (replace(last.layers[0], stride=last.layers[0].stride * entry_stride),
                      *last.layers[1:])
            last = replace(last, layers=layers)
        groups.append(replace(group, blocks=(last,)))
    return archspec.validate(archspec.fit_shortcuts(replace(spec, groups=tuple(groups))))


def shallow_origins(teacher_spec):
    """Map each conv layer name of ``reduce_depth(teacher)`` to its teacher layer name."""
    out = {"stem": "stem"}
    for g, group in enumerate(teacher_spec.groups):
        b = len(group.blocks) - 1
        for k in range(len(group.blocks[-1].layers)):
            out[archspec.layer_name(g, 0, k)] = archspec.layer_name(g, b, k)
    return out


def reduce_width(shallow_spec, report, origins=None):
    """Set every conv layer to ``max(1, n - floor(avgc))`` filters.

    ``origins`` maps this spec's layer names to report layer names (identity
    when omitted).  Projection shortcuts and the head follow automatically.
    """
    origins = origins or {}

    def _width(name, layer):
        key = origins.get(name, name)
        if key not in report:
            raise SpecError(f"sparsity report has no entry {key!r}", name)
        entry = report[key]
        if entry.filters != layer.out_channels:
            raise SpecError(f"report says {entry.filters} filters, spec has {layer.out_channels}", name)
        return replace(layer, out_channels=reduced_width(entry.filters, entry.avgc))

    stem = _width("stem", shallow_spec.stem)
    groups = []
    for g, group in enumerate(shallow_spec.groups):
        blocks = []
        for b, block in enumerate(group.blocks):
            layers = tuple(_width(archspec.layer_name(g, b, k), layer)
                           for k, layer in enumerate(block.layers))
            blocks.append(replace(block, layers=layers))
        groups.append(replace(group, blocks=tuple(blocks)))
    spec = replace(shallow_spec, stem=stem, groups=tuple(groups))
    return archspec.validate(archspec.fit_shortcuts(spec))


def compress(teacher, images, config, name=None):
    """Derive the shallow-and-thin student spec from a trained ``teacher``.

    Returns ``(student_spec, report)``; the report is keyed by teacher layer
    names.  Build the student with :func:`archspec.build_network` (fresh
    initialization) and retrain it.
    """
    report = average_prunable(teacher, images, config)
    shallow = reduce_depth(teacher.spec)
    student = reduce_width(shallow, report, shallow_origins(teacher.spec))
    student = replace(student, name=name or f"{teacher.spec.name}-student-p{config.threshold:g}")
    return student, report
