"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def _rel_error(analytic, numeric, floor):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def finite_difference_check(fn, inputs, tolerance=1e-4, step=1e-6, seed=0, floor=1e-6):
    """Compare ``fn``'s backward pass with central differences at 64-bit.

    ``fn`` receives one leaf :class:`Tensor` per array in ``inputs`` and may
    return any shape; non-scalar outputs are contracted with a fixed random
    weighting so every output element is exercised.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    rng = np.random.default_rng(seed)
    weight = np.ones(()) if out.ndim == 0 else rng.standard_normal(out.shape)

    def objective(*arrs):
        res = fn(*[Tensor(a) for a in arrs]).data
        return float((res * weight).sum())

    out.backward(weight)
    errors = []
    for idx, (arr, leaf) in enumerate(zip(arrays, leaves)):
        analytic = np.zeros_like(arr) if leaf.grad is None else leaf.grad
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            plus = objective(*arrays)
            flat[k] = orig - step
            minus = objective(*arrays)
            flat[k] = orig
            numeric.reshape(-1)[k] = (plus - minus) / (2 * step)
        errors.append(_rel_error(analytic, numeric, floor))
    return GradCheckReport(max(errors) if errors else 0.0, errors, tolerance)
