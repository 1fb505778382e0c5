"""Direct-summation reference implementations.

These are the slow, obviously-correct counterparts used to cross-check the
patch-matrix fast paths. They stay loop-based on purpose; do not "optimize"
them into the same code path they are meant to verify.
"""

from __future__ import annotations

import numpy as np


def conv2d_reference(x, w, b, stride=1, pad=0):
    """Convolution as the direct quadruple loop over (n, o, i, j).

    The kernel-window reduction is a plain elementwise-product sum. Accepts
    numpy arrays; returns float64 for tight comparisons.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"channel mismatch: input {c}, weights {c2}")
    if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
        raise ValueError("non-integral output extent")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    y = np.empty((n, o, oh, ow), np.float64)
    for ni in range(n):
        for oi in range(o):
            for i in range(oh):
                for j in range(ow):
                    window = x[ni, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    y[ni, oi, i, j] = np.sum(window * w[oi]) + b[oi]
    return y


def maxpool2_reference(x):
    """2x2/stride-2 max pooling by explicit window loops."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("odd spatial extent")
    y = np.empty((n, c, h // 2, w // 2), np.float64)
    for ni in range(n):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    y[ni, ci, i, j] = x[ni, ci, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
    return y
