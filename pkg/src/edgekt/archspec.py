"""Grouped network architectures: specs, instantiation, accounting, checkpoints.

A network is a stem convolution, an ordered list of *groups* (each a run of
blocks at one spatial resolution), and a global-average-pool + fully
connected head.  Blocks are either ``residual`` (conv layers plus a skip
connection, the final activation applied after the add) or ``plain``
(conv layers only; VGG-style stacks use one conv per block).

Parameter names follow the canonical text sections, e.g.
``group.1.block.0.layer.1.weight`` or ``group.1.block.0.shortcut.bn.scale``.
"""

import configparser
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, SpecError
from .gradcore import ops
from .gradcore.tensor import Parameter, Tensor, as_tensor

ACTIVATIONS = ("relu", "none")
BLOCK_KINDS = ("residual", "plain")
SHORTCUTS = ("identity", "projection", "none")


@dataclass(frozen=True)
class ConvLayerSpec:
    out_channels: int
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: int = 1
    has_batchnorm: bool = True
    activation: str = "relu"


@dataclass(frozen=True)
class BlockSpec:
    layers: tuple
    kind: str = "residual"
    shortcut: str = "identity"

    @property
    def out_channels(self):
        return self.layers[-1].out_channels

    @property
    def stride(self):
        return math.prod(layer.stride for layer in self.layers)


@dataclass(frozen=True)
class GroupSpec:
    blocks: tuple
    downsample_at_entry: bool = False


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    stem: ConvLayerSpec
    groups: tuple
    class_count: int
    input_channels: int = 3
    input_size: int = 32


def layer_name(g, b, k):
    return f"group.{g}.block.{b}.layer.{k}"


def shortcut_name(g, b):
    return f"group.{g}.block.{b}.shortcut"


def block_name(g, b):
    return f"group.{g}.block.{b}"


# ---------------------------------------------------------------------------
# convenience constructors
# ---------------------------------------------------------------------------

def resnet_spec(widths=(16, 32, 64), blocks_per_group=2, class_count=10, stem_width=16,
                input_size=32, name="resnet"):
    """Post-activation residual network; groups after the first halve resolution."""
    groups = []
    in_ch = stem_width
    for g, width in enumerate(widths):
        blocks = []
        for b in range(blocks_per_group):
            stride = 2 if (g > 0 and b == 0) else 1
            layers = (ConvLayerSpec(width, stride=stride), ConvLayerSpec(width))
            shortcut = "identity" if (stride == 1 and in_ch == width) else "projection"
            blocks.append(BlockSpec(layers, "residual", shortcut))
            in_ch = width
        groups.append(GroupSpec(tuple(blocks), downsample_at_entry=g > 0))
    return NetworkSpec(name, ConvLayerSpec(stem_width), tuple(groups), class_count,
                       input_size=input_size)


def plain_spec(stages=((16, 16), (32, 32), (64, 64)), class_count=10, stem_width=16,
               input_size=32, name="plain"):
    """VGG-style stack: each conv layer is a one-layer plain block.

    Stages after the first downsample with a stride-2 first convolution.
    """
    groups = []
    for g, widths in enumerate(stages):
        blocks = tuple(
            BlockSpec((ConvLayerSpec(w, stride=2 if (g > 0 and b == 0) else 1),), "plain", "none")
            for b, w in enumerate(widths))
        groups.append(GroupSpec(blocks, downsample_at_entry=g > 0))
    return NetworkSpec(name, ConvLayerSpec(stem_width), tuple(groups), class_count,
                       input_size=input_size)


# ---------------------------------------------------------------------------
# validation / shape propagation
# ---------------------------------------------------------------------------

@dataclass
class ShapeInfo:
    stem: tuple
    layers: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    block_inputs: dict = field(default_factory=dict)
    head_features: int = 0


def _check_layer(layer, where):
    if not isinstance(layer.out_channels, int) or layer.out_channels < 1:
        raise SpecError(f"out_channels must be a positive int, got {layer.out_channels!r}", where)
    kh, kw = layer.kernel
    if kh < 1 or kw < 1 or layer.stride < 1 or layer.padding < 0:
        raise SpecError(f"invalid kernel/stride/padding {layer.kernel}/{layer.stride}/{layer.padding}",
                        where)
    if layer.activation not in ACTIVATIONS:
        raise SpecError(f"unknown activation {layer.activation!r}", where)


def _out_hw(hw, layer, where):
    kh, kw = layer.kernel
    h = (hw[0] + 2 * layer.padding - kh) // layer.stride + 1
    w = (hw[1] + 2 * layer.padding - kw) // layer.stride + 1
    if h < 1 or w < 1:
        raise SpecError(f"spatial size {hw} collapses to {(h, w)}", where)
    return (h, w)


def propagate_shapes(spec):
    """Validate ``spec`` and return per-layer and per-block output shapes (c, h, w)."""
    if spec.class_count < 2:
        raise SpecError(f"class_count must be >= 2, got {spec.class_count}", "head")
    if spec.input_channels < 1 or spec.input_size < 1:
        raise SpecError("input_channels and input_size must be positive", "network")
    if not spec.groups:
        raise SpecError("network needs at least one group", "network")
    _check_layer(spec.stem, "stem")
    hw = _out_hw((spec.input_size, spec.input_size), spec.stem, "stem")
    info = ShapeInfo(stem=(spec.stem.out_channels, *hw))
    ch = spec.stem.out_channels
    for g, group in enumerate(spec.groups):
        if not group.blocks:
            raise SpecError("group has no blocks", f"group.{g}")
        group_hw = None
        for b, block in enumerate(group.blocks):
            where = block_name(g, b)
            if block.kind not in BLOCK_KINDS:
                raise SpecError(f"unknown block kind {block.kind!r}", where)
            if not block.layers:
                raise SpecError("block has no layers", where)
            in_ch, in_hw = ch, hw
            info.block_inputs[(g, b)] = (in_ch, *in_hw)
            for k, layer in enumerate(block.layers):
                lname = layer_name(g, b, k)
                _check_layer(layer, lname)
                hw = _out_hw(hw, layer, lname)
                ch = layer.out_channels
                info.layers[lname] = (ch, *hw)
            if block.kind == "residual":
                if block.shortcut == "identity":
                    if in_ch != ch or in_hw != hw:
                        raise SpecError(
                            f"identity shortcut needs matching shapes, block input {(in_ch, *in_hw)} "
                            f"vs output {(ch, *hw)}", where)
                elif block.shortcut == "projection":
                    s = block.stride
                    proj_hw = ((in_hw[0] - 1) // s + 1, (in_hw[1] - 1) // s + 1)
                    if proj_hw != hw:
                        raise SpecError(f"projection shortcut yields {proj_hw}, block yields {hw}",
                                        where)
                else:
                    raise SpecError(f"residual block needs identity or projection shortcut, "
                                    f"got {block.shortcut!r}", where)
            elif block.shortcut != "none":
                raise SpecError(f"plain block cannot have a {block.shortcut!r} shortcut", where)
            info.blocks[(g, b)] = (ch, *hw)
            if b == 0:
                entry_stride = block.stride > 1
                if entry_stride != group.downsample_at_entry:
                    raise SpecError(f"downsample_at_entry={group.downsample_at_entry} but first "
                                    f"block stride is {block.stride}", f"group.{g}")
                group_hw = hw
            elif hw != group_hw:
                raise SpecError(f"block resolution {hw} differs from group resolution {group_hw}",
                                where)
    info.head_features = ch
    return info


def validate(spec):
    propagate_shapes(spec)
    return spec


def fit_shortcuts(spec):
    """Turn identity shortcuts that no longer fit into projections."""
    groups = []
    ch, hw = spec.stem.out_channels, None
    for group in spec.groups:
        blocks = []
        for block in group.blocks:
            if block.kind == "residual" and block.shortcut == "identity":
                if block.stride != 1 or block.out_channels != ch:
                    block = replace(block, shortcut="projection")
            blocks.append(block)
            ch = block.out_channels
        groups.append(replace(group, blocks=tuple(blocks)))
    return replace(spec, groups=tuple(groups))


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def _conv_count(in_ch, layer):
    kh, kw = layer.kernel
    n = layer.out_channels * in_ch * kh * kw
    return n + (2 * layer.out_channels if layer.has_batchnorm else layer.out_channels)


def count_params(spec):
    """Exact number of trainable scalars (weights, biases, batchnorm scale/shift)."""
    validate(spec)
    total = _conv_count(spec.input_channels, spec.stem)
    ch = spec.stem.out_channels
    for group in spec.groups:
        for block in group.blocks:
            in_ch = ch
            for layer in block.layers:
                total += _conv_count(ch, layer)
                ch = layer.out_channels
            if block.kind == "residual" and block.shortcut == "projection":
                total += in_ch * ch + 2 * ch
    return total + spec.class_count * ch + spec.class_count


def compression_ratio(teacher_spec, student_spec):
    student = count_params(student_spec)
    if student <= 0:
        raise SpecError("student has no parameters", student_spec.name)
    return count_params(teacher_spec) / student


# ---------------------------------------------------------------------------
# canonical text
# ---------------------------------------------------------------------------

def _fmt_bool(v):
    return "true" if v else "false"


def _layer_lines(layer):
    return [
        f"out_channels = {layer.out_channels}",
        f"kernel = {layer.kernel[0]}x{layer.kernel[1]}",
        f"stride = {layer.stride}",
        f"padding = {layer.padding}",
        f"batchnorm = {_fmt_bool(layer.has_batchnorm)}",
        f"activation = {layer.activation}",
    ]


def spec_to_text(spec):
    """Canonical line-oriented text; ``parse_spec(spec_to_text(s)) == s``."""
    out = ["[network]", f"name = {spec.name}", f"input_channels = {spec.input_channels}",
           f"input_size = {spec.input_size}", "", "[stem]", *_layer_lines(spec.stem), ""]
    for g, group in enumerate(spec.groups):
        out += [f"[group.{g}]", f"downsample_at_entry = {_fmt_bool(group.downsample_at_entry)}", ""]
        for b, block in enumerate(group.blocks):
            out += [f"[{block_name(g, b)}]", f"kind = {block.kind}", f"shortcut = {block.shortcut}", ""]
            for k, layer in enumerate(block.layers):
                out += [f"[{layer_name(g, b, k)}]", *_layer_lines(layer), ""]
    out += ["[head]", "pool = global-avg", f"class_count = {spec.class_count}", ""]
    return "\n".join(out)


_LAYER_KEYS = {"out_channels", "kernel", "stride", "padding", "batchnorm", "activation"}
_SECTION_KEYS = {
    "network": {"name", "input_channels", "input_size"},
    "stem": _LAYER_KEYS,
    "group": {"downsample_at_entry"},
    "block": {"kind", "shortcut"},
    "layer": _LAYER_KEYS,
    "head": {"pool", "class_count"},
}


def _parse_bool(text, where):
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise SpecError(f"expected a boolean, got {text!r}", where)


def _parse_int(text, where):
    try:
        return int(text)
    except ValueError:
        raise SpecError(f"expected an integer, got {text!r}", where) from None


def _parse_layer(sec, where):
    kernel = sec.get("kernel", "3x3").lower().replace(",", "x").split("x")
    if len(kernel) == 1:
        kernel = kernel * 2
    if len(kernel) != 2:
        raise SpecError(f"bad kernel {sec.get('kernel')!r}", where)
    if "out_channels" not in sec:
        raise SpecError("missing out_channels", where)
    return ConvLayerSpec(
        out_channels=_parse_int(sec["out_channels"], where),
        kernel=(_parse_int(kernel[0], where), _parse_int(kernel[1], where)),
        stride=_parse_int(sec.get("stride", "1"), where),
        padding=_parse_int(sec.get("padding", "1"), where),
        has_batchnorm=_parse_bool(sec.get("batchnorm", "true"), where),
        activation=sec.get("activation", "relu").strip(),
    )


def parse_spec(text):
    """Parse canonical spec text.  Unknown sections or keys raise :class:`SpecError`."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",), strict=True)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError(f"unparseable spec text: {exc}") from None

    groups = {}
    stem = head = network = None
    for name in cp.sections():
        parts = name.split(".")
        sec = cp[name]
        if name in ("network", "stem", "head"):
            kind = name
        elif len(parts) == 2 and parts[0] == "group":
            kind = "group"
        elif len(parts) == 4 and parts[0] == "group" and parts[2] == "block":
            kind = "block"
        elif len(parts) == 6 and parts[0] == "group" and parts[2] == "block" and parts[4] == "layer":
            kind = "layer"
        else:
            raise SpecError(f"unknown section [{name}]")
        unknown = set(sec.keys()) - _SECTION_KEYS[kind]
        if unknown:
            raise SpecError(f"unknown keys {sorted(unknown)}", name)
        idx = [_parse_int(p, name) for p in parts[1::2]] if kind in ("group", "block", "layer") else []
        if kind == "network":
            network = sec
        elif kind == "stem":
            stem = _parse_layer(sec, name)
        elif kind == "head":
            head = sec
        elif kind == "group":
            groups.setdefault(idx[0], {"blocks": {}})["sec"] = sec
        elif kind == "block":
            g = groups.setdefault(idx[0], {"blocks": {}})
            g["blocks"].setdefault(idx[1], {"layers": {}})["sec"] = sec
        else:
            g = groups.setdefault(idx[0], {"blocks": {}})
            blk = g["blocks"].setdefault(idx[1], {"layers": {}})
            blk["layers"][idx[2]] = _parse_layer(sec, name)

    if stem is None or head is None:
        raise SpecError("spec needs [stem] and [head] sections")
    if "class_count" not in head:
        raise SpecError("missing class_count", "head")
    if head.get("pool", "global-avg").strip() != "global-avg":
        raise SpecError(f"unsupported pool {head.get('pool')!r}", "head")

    def _dense(mapping, where):
        keys = sorted(mapping)
        if keys != list(range(len(keys))):
            raise SpecError(f"indices {keys} are not contiguous from 0", where)
        return [mapping[k] for k in keys]

    group_specs = []
    for g, gdata in enumerate(_dense(groups, "groups")):
        gsec = gdata.get("sec", {})
        blocks = []
        for b, bdata in enumerate(_dense(gdata["blocks"], f"group.{g}")):
            bsec = bdata.get("sec", {})
            kind = bsec.get("kind", "residual").strip()
            shortcut = bsec.get("shortcut", "identity" if kind == "residual" else "none").strip()
            if shortcut not in SHORTCUTS:
                raise SpecError(f"unknown shortcut {shortcut!r}", block_name(g, b))
            layers = tuple(_dense(bdata["layers"], block_name(g, b)))
            blocks.append(BlockSpec(layers, kind, shortcut))
        group_specs.append(GroupSpec(tuple(blocks),
                                     _parse_bool(gsec.get("downsample_at_entry", "false"), f"group.{g}")))
    net = network or {}
    spec = NetworkSpec(
        name=net.get("name", "network").strip(),
        stem=stem,
        groups=tuple(group_specs),
        class_count=_parse_int(head["class_count"], "head"),
        input_channels=_parse_int(net.get("input_channels", "3"), "network"),
        input_size=_parse_int(net.get("input_size", "32"), "network"),
    )
    return validate(spec)


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


def save_spec(spec, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(spec_to_text(spec))


# ---------------------------------------------------------------------------
# model instances
# ---------------------------------------------------------------------------

@dataclass
class Tap:
    group: int
    block: int
    output: Tensor


@dataclass
class ForwardResult:
    logits: Tensor
    taps: list
    activations: dict


def _conv_entries(spec):
    """(name, in_channels, layer spec, role) for every conv in canonical order."""
    entries = [("stem", spec.input_channels, spec.stem, "layer")]
    ch = spec.stem.out_channels
    for g, group in enumerate(spec.groups):
        for b, block in enumerate(group.blocks):
            in_ch = ch
            for k, layer in enumerate(block.layers):
                entries.append((layer_name(g, b, k), ch, layer, "layer"))
                ch = layer.out_channels
            if block.kind == "residual" and block.shortcut == "projection":
                proj = ConvLayerSpec(ch, (1, 1), block.stride, 0, True, "none")
                entries.append((shortcut_name(g, b), in_ch, proj, "shortcut"))
    return entries, ch


def tensor_layout(spec):
    """Ordered (name, shape, kind) for every checkpointed tensor; kind is 'param' or 'buffer'."""
    entries, feat = _conv_entries(spec)
    out = []
    for name, in_ch, layer, _ in entries:
        kh, kw = layer.kernel
        out.append((f"{name}.weight", (layer.out_channels, in_ch, kh, kw), "param"))
        if layer.has_batchnorm:
            c = layer.out_channels
            out += [(f"{name}.bn.scale", (c,), "param"), (f"{name}.bn.shift", (c,), "param"),
                    (f"{name}.bn.running_mean", (c,), "buffer"),
                    (f"{name}.bn.running_var", (c,), "buffer")]
        else:
            out.append((f"{name}.bias", (layer.out_channels,), "param"))
    out += [("head.weight", (spec.class_count, feat), "param"),
            ("head.bias", (spec.class_count,), "param")]
    return out


class Network:
    """A built model: parameters, batchnorm buffers, and the forward pass."""

    def __init__(self, spec, seed=0):
        self.spec = validate(spec)
        self.shapes = propagate_shapes(spec)
        self.params = {}
        self.buffers = {}
        rng = np.random.default_rng(seed)
        for name, shape, kind in tensor_layout(spec):
            if kind == "buffer":
                fill = 1.0 if name.endswith("running_var") else 0.0
                self.buffers[name] = np.full(shape, fill, dtype=np.float32)
                continue
            if name.endswith(".weight"):
                fan_in = int(np.prod(shape[1:]))
                bound = math.sqrt(6.0 / fan_in)
                value = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            elif name.endswith(".bn.scale"):
                value = np.ones(shape, dtype=np.float32)
            else:
                value = np.zeros(shape, dtype=np.float32)
            self.params[name] = Parameter(value, name)

    # -- bookkeeping ---------------------------------------------------------

    def parameters(self):
        return list(self.params.values())

    def param_count(self):
        return sum(p.data.size for p in self.params.values())

    def conv_layer_names(self):
        """Names of the conv layers whose activations are pruning candidates."""
        return ["stem"] + [layer_name(g, b, k)
                           for g, group in enumerate(self.spec.groups)
                           for b, block in enumerate(group.blocks)
                           for k in range(len(block.layers))]

    def set_trainable(self, names=None):
        """Mark exactly ``names`` trainable (all parameters when ``None``)."""
        for name, p in self.params.items():
            p.trainable = names is None or name in names

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def clone(self):
        other = Network.__new__(Network)
        other.spec = self.spec
        other.shapes = self.shapes
        other.params = {n: Parameter(p.data.copy(), n, p.trainable) for n, p in self.params.items()}
        other.buffers = {n: b.copy() for n, b in self.buffers.items()}
        return other

    def state(self):
        """Name -> array for every checkpointed tensor, in canonical order."""
        out = {}
        for name, _, kind in tensor_layout(self.spec):
            out[name] = self.params[name].data if kind == "param" else self.buffers[name]
        return out

    # -- forward -------------------------------------------------------------

    def _conv(self, name, layer, x, train, frozen_bn):
        kw = {} if layer.has_batchnorm else {"bias": self.params[f"{name}.bias"]}
        z = ops.conv2d(x, self.params[f"{name}.weight"], stride=layer.stride,
                       padding=layer.padding, **kw)
        if layer.has_batchnorm:
            z = ops.batch_norm(z, self.params[f"{name}.bn.scale"], self.params[f"{name}.bn.shift"],
                               self.buffers[f"{name}.bn.running_mean"],
                               self.buffers[f"{name}.bn.running_var"],
                               train=train and name not in frozen_bn)
        return z

    def forward(self, x, train=False, frozen_bn=frozenset(), capture=False):
        """Run the network on a (n, c, h, w) batch.

        ``frozen_bn`` names conv layers whose batchnorm stays in eval mode even
        when ``train`` is set.  With ``capture`` the post-activation map of
        every conv layer is recorded (for the last layer of a residual block,
        the map after the skip add and activation).
        """
        x = as_tensor(x)
        spec = self.spec
        activations = {}
        taps = []
        h = self._conv("stem", spec.stem, x, train, frozen_bn)
        if spec.stem.activation == "relu":
            h = ops.relu(h)
        if capture:
            activations["stem"] = h.data
        for g, group in enumerate(spec.groups):
            for b, block in enumerate(group.blocks):
                inp = h
                last = len(block.layers) - 1
                for k, layer in enumerate(block.layers):
                    name = layer_name(g, b, k)
                    z = self._conv(name, layer, h, train, frozen_bn)
                    if block.kind == "residual" and k == last:
                        if block.shortcut == "projection":
                            proj = ConvLayerSpec(layer.out_channels, (1, 1), block.stride, 0, True, "none")
                            sc = self._conv(shortcut_name(g, b), proj, inp, train, frozen_bn)
                        else:
                            sc = inp
                        z = ops.add(z, sc)
                    h = ops.relu(z) if layer.activation == "relu" else z
                    if capture:
                        activations[name] = h.data
                taps.append(Tap(g, b, h))
        pooled = ops.flatten(ops.global_avg_pool(h))
        logits = ops.linear(pooled, self.params["head.weight"], self.params["head.bias"])
        return ForwardResult(logits, taps, activations)

    def predict(self, images, batch_size=256):
        from .gradcore.tensor import no_grad

        preds = []
        with no_grad():
            for i in range(0, len(images), batch_size):
                res = self.forward(images[i:i + batch_size], train=False)
                preds.append(np.argmax(res.logits.data, axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def build_network(spec, seed=0):
    return Network(spec, seed)


def block_output_taps(model):
    """(group, block, tap name) for every block, in forward order."""
    return [(g, b, block_name(g, b))
            for g, group in enumerate(model.spec.groups)
            for b in range(len(group.blocks))]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"EKTC"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(model):
    text = spec_to_text(model.spec).encode("utf-8")
    state = model.state()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION),
              struct.pack("<I", len(text)), text, struct.pack("<I", len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what, tensor=None):
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated while reading {what}", tensor=tensor)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what, tensor=None):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what, tensor))


def checkpoint_from_bytes(buf):
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = r.unpack("<H", "version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (text_len,) = r.unpack("<I", "spec length")
    try:
        text = r.take(text_len, "spec text").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"spec text is not UTF-8: {exc}") from None
    try:
        spec = parse_spec(text)
    except SpecError as exc:
        raise FormatError(f"embedded spec invalid: {exc}") from None
    (count,) = r.unpack("<I", "tensor count")
    layout = {name: (shape, kind) for name, shape, kind in tensor_layout(spec)}
    values = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"name length of tensor #{i}")
        try:
            name = r.take(nlen, f"name of tensor #{i}").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor #{i} name is not UTF-8") from None
        (ndim,) = r.unpack("<B", "ndim", name)
        dims = r.unpack(f"<{ndim}I", "dims", name)
        if name not in layout:
            raise FormatError(f"tensor {name!r} is not declared by the embedded spec", tensor=name)
        if name in values:
            raise FormatError(f"tensor {name!r} appears twice", tensor=name)
        if tuple(dims) != layout[name][0]:
            raise FormatError(f"tensor {name!r} has shape {tuple(dims)}, spec declares "
                              f"{layout[name][0]}", tensor=name)
        n = math.prod(dims)
        raw = r.take(4 * n, f"values of tensor {name!r}", name)
        values[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last tensor")
    missing = [n for n in layout if n not in values]
    if missing:
        raise FormatError(f"checkpoint lacks tensors {missing}", tensor=missing[0])
    model = Network(spec, seed=0)
    for name, arr in values.items():
        if layout[name][1] == "param":
            model.params[name].data = arr
        else:
            model.buffers[name] = arr
    return model


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
