"""Exception hierarchy shared by every edgekt module.

The harness maps these onto process exit codes, so each class carries the
code it should produce.
"""


class EdgeKTError(Exception):
    exit_code = 1


class ShapeError(EdgeKTError, ValueError):
    """Operand dimensions are incompatible."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        dims = " vs ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {dims}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SpecError(EdgeKTError, ValueError):
    """A network spec failed validation."""

    exit_code = 2

    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"{layer}: {message}"
        super().__init__(message)


class ConfigError(EdgeKTError, ValueError):
    exit_code = 2


class FormatError(EdgeKTError, ValueError):
    """Malformed checkpoint, report or dataset file."""

    exit_code = 3

    def __init__(self, message, tensor=None):
        self.tensor = tensor
        super().__init__(message)


class DataError(EdgeKTError, ValueError):
    exit_code = 3


class NumericError(EdgeKTError, ArithmeticError):
    """Non-finite loss or parameter encountered during training."""

    exit_code = 4


class MissingGradError(EdgeKTError, RuntimeError):
    exit_code = 4

    def __init__(self, name):
        self.name = name
        super().__init__(f"parameter {name!r} is trainable but has no gradient")
