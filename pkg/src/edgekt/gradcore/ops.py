"""Differentiable layer operations on rank-4 (n, c, h, w) batches.

Every op accepts :class:`Tensor` (or plain arrays, treated as constants),
preserves the input dtype, and computes parent gradients only for parents
that require them.
"""

import numpy as np

from .. import kernels
from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_EPS = 1e-7


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` with ``weight`` (out_c, in_c, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape,
                         detail="expected input (n, c, h, w) and weight (out_c, c, kh, kw)")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} padding={padding}")
    n, c, h, w = x.shape
    oc, _, kh, kw = weight.shape
    oh = kernels.conv_output_size(h, kh, stride, padding)
    ow = kernels.conv_output_size(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError("conv2d", x.shape, weight.shape,
                         detail=f"stride {stride} padding {padding} leave no output")

    cols = kernels.im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(oc, -1)
    out = (wmat @ cols).reshape(oc, n, oh, ow).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, oc, 1, 1)
        parents.append(bias)

    def backward(g):
        gm = g.transpose(1, 0, 2, 3).reshape(oc, -1)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (gm @ cols.T).reshape(weight.shape)
        if x.requires_grad:
            gx = kernels.col2im(wmat.T @ gm, x.shape, kh, kw, stride, padding)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return make_result(out, parents, backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, np.zeros((), dtype=x.dtype))

    def backward(g):
        return (g * mask,)

    return make_result(out, [x], backward)


def batch_norm(x, scale, shift, running_mean, running_var, train,
               momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel normalisation.

    In train mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (plain arrays) are updated in place by an exponential
    moving average; the running variance uses the unbiased estimate.  In
    eval mode the running statistics are used and left untouched.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,) or running_mean.shape != (c,):
        raise ShapeError("batch_norm", x.shape, scale.shape, detail="channel count mismatch")
    bshape = (1, c, 1, 1)
    if train:
        m = x.data.size // c
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * scale.data.reshape(bshape) + shift.data.reshape(bshape)

    def backward(g):
        gx = gs = gb = None
        if scale.requires_grad:
            gs = (g * xhat).sum(axis=(0, 2, 3))
        if shift.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gxhat = g * scale.data.reshape(bshape)
            if train:
                m = g.size // c
                s1 = gxhat.sum(axis=(0, 2, 3)).reshape(bshape)
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3)).reshape(bshape)
                gx = (inv_std.reshape(bshape) / m) * (m * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv_std.reshape(bshape)
        return gx, gs, gb

    return make_result(out.astype(x.dtype, copy=False), [x, scale, shift], backward)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)

    def backward(g):
        return g, g

    return make_result(a.data + b.data, [a, b], backward)


def global_avg_pool(x):
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("global_avg_pool", x.shape)
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return make_result(out, [x], backward)


def flatten(x):
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        return (g.reshape(shape),)

    return make_result(x.data.reshape(shape[0], -1), [x], backward)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` shaped (out_features, in_features)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear", weight.shape, bias.shape, detail="bias length")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return make_result(out, parents, backward)


def softmax_rows(logits):
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return make_result(y, [logits], backward)


def l2_normalize_flat(x, per_sample=False):
    """Flatten and scale to unit l2 norm.

    Returns ``(unit, degenerate)``.  With ``per_sample`` each sample becomes
    one row; otherwise the whole tensor is one vector.  An all-zero input
    (or row) maps to zeros and sets ``degenerate``.
    """
    x = as_tensor(x)
    shape = x.shape
    v = x.data.reshape(shape[0], -1) if per_sample else x.data.reshape(-1)
    norm = np.sqrt((v.astype(np.float64) ** 2).sum(axis=-1, keepdims=True)).astype(x.dtype)
    zero = norm == 0
    safe = np.where(zero, np.ones_like(norm), norm)
    u = np.where(zero, np.zeros_like(v), v / safe)
    degenerate = bool(zero.any())

    def backward(g):
        dot = (u * g).sum(axis=-1, keepdims=True)
        gv = np.where(zero, np.zeros_like(g), (g - u * dot) / safe)
        return (gv.reshape(shape),)

    return make_result(u, [x], backward), degenerate


def pad_channels(x, target_channels):
    """Append zero channels so ``x`` has ``target_channels`` channels."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c > target_channels:
        raise ShapeError("pad_channels", x.shape, (n, target_channels, h, w),
                         detail="input has more channels than the target")
    if c == target_channels:
        return x
    out = np.zeros((n, target_channels, h, w), dtype=x.dtype)
    out[:, :c] = x.data

    def backward(g):
        return (g[:, :c],)

    return make_result(out, [x], backward)


def euclidean_distance(a, b):
    """sqrt(sum((a - b)**2)) over all elements; subgradient 0 at distance 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("euclidean_distance", a.shape, b.shape)
    diff = a.data - b.data
    d = np.sqrt((diff.astype(np.float64) ** 2).sum())
    out = np.asarray(d, dtype=np.result_type(a.dtype, b.dtype))

    def backward(g):
        if d == 0:
            unit = np.zeros_like(diff)
        else:
            unit = diff / out
        return g * unit, -g * unit

    return make_result(out, [a, b], backward)


def two_sided_log_loss(probs, onehot, eps=PROB_EPS):
    """-mean_n sum_c [y log p + (1 - y) log(1 - p)] with p clipped to [eps, 1-eps].

    The clip passes no gradient where it is active.
    """
    probs = as_tensor(probs)
    y = np.asarray(onehot, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise ShapeError("two_sided_log_loss", probs.shape, y.shape)
    n = probs.shape[0]
    p = np.clip(probs.data, eps, 1 - eps)
    inside = (probs.data >= eps) & (probs.data <= 1 - eps)
    ll = y * np.log(p) + (1 - y) * np.log1p(-p)
    out = np.asarray(-ll.sum(dtype=np.float64) / n, dtype=probs.dtype)

    def backward(g):
        dp = -(y / p - (1 - y) / (1 - p)) / n
        return (g * dp * inside,)

    return make_result(out, [probs], backward)


def categorical_log_loss(probs, onehot, eps=PROB_EPS):
    """-mean_n sum_c y log p over probabilities clipped to [eps, 1-eps]."""
    probs = as_tensor(probs)
    y = np.asarray(onehot, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise ShapeError("categorical_log_loss", probs.shape, y.shape)
    n = probs.shape[0]
    p = np.clip(probs.data, eps, 1 - eps)
    inside = (probs.data >= eps) & (probs.data <= 1 - eps)
    out = np.asarray(-(y * np.log(p)).sum(dtype=np.float64) / n, dtype=probs.dtype)

    def backward(g):
        return (-g * y / p / n * inside,)

    return make_result(out, [probs], backward)


def cross_entropy(logits, labels):
    """Mean categorical cross entropy of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    out = np.asarray(-logp[np.arange(n), labels].sum(dtype=np.float64) / n, dtype=logits.dtype)

    def backward(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1
        return (g * d / n,)

    return make_result(out, [logits], backward)


def weighted_sum(weights, terms):
    """Scalar sum of ``w * t`` over paired weights and scalar tensors."""
    terms = [as_tensor(t) for t in terms]
    weights = [float(w) for w in weights]
    if len(weights) != len(terms):
        raise ValueError("weighted_sum: weights and terms differ in length")
    dtype = np.result_type(*[t.dtype for t in terms]) if terms else np.float32
    total = np.zeros((), dtype=np.float64)
    for w, t in zip(weights, terms):
        total += w * t.data.astype(np.float64)

    def backward(g):
        return tuple(np.asarray(g * w, dtype=t.dtype) for w, t in zip(weights, terms))

    return make_result(np.asarray(total, dtype=dtype), terms, backward)


def one_hot(labels, num_classes, dtype=np.float32):
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


__all__ = [
    "Tensor", "conv2d", "relu", "batch_norm", "add", "global_avg_pool", "flatten",
    "linear", "softmax_rows", "l2_normalize_flat", "pad_channels",
    "euclidean_distance", "two_sided_log_loss", "categorical_log_loss", "cross_entropy", "weighted_sum", "one_hot",
]
