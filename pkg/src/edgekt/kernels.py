"""Hot inner loops behind convolution and sparsity statistics.

``col2im`` and ``zero_counts`` have a numba ``@njit`` implementation and a
pure-numpy one with identical results (the accumulation order in ``col2im`` is
the same in both, so outputs agree bitwise); ``im2col`` is numpy-only.  Numba is used when it imports cleanly and the
environment variable ``EDGEKT_DISABLE_NUMBA`` is unset or falsy; the choice is
fixed at import time and reported by :data:`BACKEND`.
"""

import os

import numpy as np

_FALSY = {"", "0", "false", "no", "off"}

try:
    if os.environ.get("EDGEKT_DISABLE_NUMBA", "").strip().lower() not in _FALSY:
        raise ImportError("numba disabled by EDGEKT_DISABLE_NUMBA")
    import numba
except ImportError:
    numba = None

BACKEND = "numba" if numba is not None else "numpy"


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def _pad(x, pad):
    if not pad:
        return np.ascontiguousarray(x)
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    return xp


def _im2col_numpy(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    xp = _pad(x, pad)
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(c * kh * kw, n * oh * ow)


def _col2im_numpy(cols, n, c, h, w, kh, kw, stride, pad):
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    cols = cols.reshape(c, kh, kw, n, oh, ow)
    xp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, i, j]
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3))


def _zero_counts_numpy(acts):
    return np.count_nonzero(acts == 0, axis=(2, 3)).astype(np.int64)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True, boundscheck=False, fastmath=False)
    def _col2im_nb(cols, n, c, h, w, kh, kw, stride, pad, oh, ow):
        xp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
        # per output element the (i, j) order matches the numpy path
        for ci in range(c):
            for ni in range(n):
                for i in range(kh):
                    for j in range(kw):
                        for y in range(oh):
                            r = y * stride + i
                            for z in range(ow):
                                xp[ci, ni, r, z * stride + j] += cols[ci, i, j, ni, y, z]
        out = np.empty((n, c, h, w), dtype=cols.dtype)
        for ni in range(n):
            for ci in range(c):
                for r in range(h):
                    for q in range(w):
                        out[ni, ci, r, q] = xp[ci, ni, r + pad, q + pad]
        return out

    @numba.njit(cache=True, boundscheck=False, fastmath=False)
    def _zero_counts_nb(acts):
        n, c, h, w = acts.shape
        out = np.zeros((n, c), dtype=np.int64)
        for ni in range(n):
            for ci in range(c):
                k = 0
                for r in range(h):
                    for q in range(w):
                        if acts[ni, ci, r, q] == 0:
                            k += 1
                out[ni, ci] = k
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def im2col(x, kh, kw, stride, pad):
    """Unfold ``x`` (n, c, h, w) into a (c*kh*kw, n*oh*ow) patch matrix.

    This is a pure strided copy that numpy already runs at memory bandwidth,
    so it has no compiled variant; a numba loop measured about 3x slower.
    """
    return _im2col_numpy(x, kh, kw, stride, pad)


def col2im(cols, shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patches back to an image batch."""
    n, c, h, w = shape
    if numba is None:
        return _col2im_numpy(cols, n, c, h, w, kh, kw, stride, pad)
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    cols = np.ascontiguousarray(cols).reshape(c, kh, kw, n, oh, ow)
    return _col2im_nb(cols, n, c, h, w, kh, kw, stride, pad, oh, ow)


def zero_counts(acts):
    """Number of exactly-zero elements in every (sample, channel) map."""
    if numba is None:
        return _zero_counts_numpy(acts)
    return _zero_counts_nb(np.ascontiguousarray(acts))
