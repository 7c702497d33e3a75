"""Run configuration: ``key = value`` lines under ``[section]`` headers.

Every key a command may read is declared in :data:`SCHEMA` with its type and
default; unknown sections or keys are rejected.  Relative paths resolve
against the directory holding the config file.
"""

import configparser
import os
import zlib
from dataclasses import dataclass

from ..errors import ConfigError


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    text = text.strip()
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip()) if text else ()


def _floats(text):
    text = text.strip()
    return tuple(float(v) for v in text.split(",") if v.strip()) if text else ()


def _opt_bool(text):
    return None if text.strip().lower() in ("", "auto") else _bool(text)


def _opt_float(text):
    return None if text.strip().lower() in ("", "auto") else float(text)


_str = str.strip

# section -> key -> (parser, default)
SCHEMA = {
    "run": {"seed": (int, 0), "name": (_str, "run")},
    "data": {
        "source": (_str, "synthetic"), "classes": (int, 4), "per_class": (int, 100),
        "image_size": (int, 32), "data_seed": (int, 0), "val_fraction": (float, 0.15),
        "test_fraction": (float, 0.25), "protocol": (_str, "plain"), "new_classes": (_ints, ()),
        "seen_classes": (_ints, ()), "train_classes": (_ints, ()), "transfer_classes": (_ints, ()),
        "augment_crop": (_bool, False), "augment_flip": (_bool, False),
        "augment_cutout": (_bool, False), "pad_pixels": (int, 4), "flip_prob": (float, 0.5),
        "cutout_size": (int, 16),
    },
    "model": {
        "spec": (_str, ""), "arch": (_str, "resnet"), "widths": (_ints, (16, 32, 64)),
        "blocks_per_group": (int, 2), "stem_width": (int, 16), "name": (_str, "teacher"),
    },
    "train": {
        "optimizer": (_str, "sgd-nesterov"), "lr": (float, 0.1), "momentum": (float, 0.9),
        "weight_decay": (float, 5e-4), "schedule": (_str, "cosine"), "decay_factor": (float, 0.98),
        "drop_epochs": (_ints, ()), "drop_factor": (float, 0.1), "epochs": (int, 10),
        "batch_size": (int, 64), "loss": (_str, "cross-entropy"),
    },
    "pruning": {"threshold": (float, 0.9), "samples": (int, 64), "calibration_seed": (int, 0)},
    "kt": {
        "lambda1": (float, 1.0), "lambda2": (float, 1.0), "lambda3": (_opt_float, None),
        "train_head": (_opt_bool, None), "remap_every_batch": (_bool, True),
        "j3_form": (_str, "two-sided"), "flatten": (_str, "batch"), "student_bn": (_str, "eval"),
        "ablation": (_bool, False),
    },
    "inputs": {
        "teacher": (_str, ""), "student": (_str, ""), "student_spec": (_str, ""),
        "checkpoint": (_str, ""),
    },
    "eval": {"split": (_str, "test"), "sets": (_str, "")},
}

PATH_KEYS = {("model", "spec"), ("inputs", "teacher"), ("inputs", "student"),
             ("inputs", "student_spec"), ("inputs", "checkpoint")}


@dataclass
class RunConfig:
    values: dict
    base_dir: str
    source: str = ""

    def get(self, section, key):
        return self.values[section][key]

    def section(self, name):
        return dict(self.values[name])

    def path(self, section, key, must_exist=True):
        value = self.values[section][key]
        if not value:
            raise ConfigError(f"[{section}] {key} is required for this command")
        path = value if os.path.isabs(value) else os.path.join(self.base_dir, value)
        if must_exist and not os.path.exists(path):
            raise ConfigError(f"[{section}] {key} = {value!r} does not exist (resolved to {path})")
        return path

    @property
    def seed(self):
        return self.values["run"]["seed"]


def _defaults():
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_config(text, base_dir=".", source="<string>", overrides=()):
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",), strict=True)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = _defaults()
    raw = [(sec, key, cp[sec][key]) for sec in cp.sections() for key in cp[sec]]
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        raw.append((sec, key, value))
    for sec, key, text_value in raw:
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        if key not in SCHEMA[sec]:
            raise ConfigError(f"{source}: unknown key {key!r} in [{sec}]")
        parser = SCHEMA[sec][key][0]
        try:
            values[sec][key] = parser(text_value)
        except ValueError as exc:
            raise ConfigError(f"{source}: [{sec}] {key}: {exc}") from None
    return RunConfig(values, os.path.abspath(base_dir), source)


def load_config(path, overrides=()):
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), os.path.dirname(os.path.abspath(path)), path, overrides)


def derive_seed(seed, tag):
    """Stable 32-bit sub-seed for a named purpose."""
    return zlib.crc32(f"{int(seed)}:{tag}".encode())
