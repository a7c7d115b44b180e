"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``M2D_PURE_PYTHON=1``.
Contracts match ``_kernels.pyx`` exactly; see ``kernels.py``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

OUT_OF_RANGE = -1
REJECTED = -2
N_LABELS = 5


def fir_filter(padded, h):
    """Valid-mode correlation of each row of ``padded`` with symmetric ``h``."""
    out = np.empty((padded.shape[0], padded.shape[1] - len(h) + 1))
    for i, row in enumerate(padded):
        out[i] = np.convolve(row, h[::-1], mode="valid")
    return out


def conv_time_forward(x, w, b):
    """out[n, f, c, t] = sum_k w[f, k] * x[n, c, t + k] + b[f]."""
    n, c, _ = x.shape
    f, k = w.shape
    win = sliding_window_view(x, k, axis=2)  # (n, c, t, k)
    t = win.shape[2]
    out = win.reshape(-1, k) @ w.T  # (n*c*t, f)
    out = out.reshape(n, c, t, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out) + b[None, :, None, None]


def conv_time_weight_grad(x, g):
    """Gradients of ``conv_time_forward`` w.r.t. its weights and bias."""
    _, f, _, t = g.shape
    k = x.shape[2] - t + 1
    win = sliding_window_view(x, k, axis=2)  # (n, c, t, k)
    gw = np.einsum("nfct,nctk->fk", g, win, optimize=True)
    return gw, g.sum(axis=(0, 2, 3))


def aggregate_windows(labels, starts, width, majority):
    """Aggregate label windows ``labels[s:s + width]`` for each start.

    Returns OUT_OF_RANGE if any sample is out of range. Otherwise the
    rejection rule keeps only uniform windows (REJECTED else); the majority
    rule picks the most frequent label, breaking ties by latest occurrence.
    """
    labels = np.asarray(labels, dtype=np.int8)
    starts = np.asarray(starts, dtype=np.int64)
    out = np.empty(len(starts), dtype=np.int8)
    if len(starts) == 0:
        return out
    win = sliding_window_view(labels, width)[starts]
    oor = (win < 0).any(axis=1)
    if not majority:
        uniform = (win == win[:, :1]).all(axis=1)
        out[:] = np.where(uniform, win[:, 0], REJECTED)
    else:
        safe = np.where(win < 0, 0, win)
        onehot = safe[:, :, None] == np.arange(N_LABELS)[None, None, :]
        counts = onehot.sum(axis=1)
        # latest position of each label; -1 if absent
        pos = np.where(onehot, np.arange(width)[None, :, None], -1).max(axis=1)
        tied = counts == counts.max(axis=1, keepdims=True)
        out[:] = np.where(tied, pos, -1).argmax(axis=1)
    out[oor] = OUT_OF_RANGE
    return out
