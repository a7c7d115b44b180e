"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension ``m2d._kernels`` is used when it imports; set
``M2D_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the active
implementation.

Kernels:

fir_filter(padded, h)
    valid-mode filtering of each row of a C-contiguous float64 matrix.
conv_time_forward(x, w, b)
    per-channel temporal convolution, (N, C, W) -> (N, F, C, W - K + 1).
conv_time_weight_grad(x, g)
    weight and bias gradients of ``conv_time_forward``.
aggregate_windows(labels, starts, width, majority)
    rejection / majority aggregation of label windows.
"""

from __future__ import annotations

import os

from . import _kernels_py

OUT_OF_RANGE = _kernels_py.OUT_OF_RANGE
REJECTED = _kernels_py.REJECTED


def _load():
    if os.environ.get("M2D_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _kernels
    except ImportError:
        return _kernels_py, "python"
    return _kernels, "cython"


_impl, BACKEND = _load()

fir_filter = _impl.fir_filter
conv_time_forward = _impl.conv_time_forward
conv_time_weight_grad = _impl.conv_time_weight_grad
aggregate_windows = _impl.aggregate_windows
