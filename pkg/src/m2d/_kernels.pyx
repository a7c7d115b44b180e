# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see _kernels_py.py for the reference contracts."""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()

DEF N_LABELS = 5
DEF CORR_BLOCK = 128
cdef signed char OUT_OF_RANGE = -1
cdef signed char REJECTED = -2


cdef inline void _correlate_row(const floating* x, const floating* h, Py_ssize_t n_taps,
                                floating* out, Py_ssize_t n_out, floating bias) noexcept nogil:
    """out[t] = bias + sum_k h[k] * x[t + k].

    Outputs are produced in blocks of CORR_BLOCK held in a local accumulator
    and taps are consumed four at a time, so the inner loop is a contiguous
    multiply-add the compiler vectorises with few accumulator round trips.
    """
    cdef floating acc[CORR_BLOCK]
    cdef Py_ssize_t t, j, k, width, k4 = n_taps - n_taps % 4
    cdef floating h0, h1, h2, h3
    cdef const floating* q
    for t in range(0, n_out, CORR_BLOCK):
        width = min(CORR_BLOCK, n_out - t)
        for j in range(width):
            acc[j] = bias
        for k in range(0, k4, 4):
            h0 = h[k]
            h1 = h[k + 1]
            h2 = h[k + 2]
            h3 = h[k + 3]
            q = x + t + k
            for j in range(width):
                acc[j] = acc[j] + (h0 * q[j] + h1 * q[j + 1] + h2 * q[j + 2] + h3 * q[j + 3])
        for k in range(k4, n_taps):
            h0 = h[k]
            q = x + t + k
            for j in range(width):
                acc[j] = acc[j] + h0 * q[j]
        for j in range(width):
            out[t + j] = acc[j]


def fir_filter(const double[:, ::1] padded, const double[::1] h):
    cdef Py_ssize_t n_rows = padded.shape[0]
    cdef Py_ssize_t n_taps = h.shape[0]
    cdef Py_ssize_t n_out = padded.shape[1] - n_taps + 1
    out_arr = np.empty((n_rows, n_out), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r
    if n_out <= 0 or n_rows == 0:
        return out_arr
    with nogil:
        for r in range(n_rows):
            _correlate_row(&padded[r, 0], &h[0], n_taps, &out[r, 0], n_out, 0.0)
    return out_arr


def conv_time_forward(const floating[:, :, ::1] x, const floating[:, ::1] w, const floating[::1] b):
    cdef Py_ssize_t n_batch = x.shape[0], n_ch = x.shape[1], n_in = x.shape[2]
    cdef Py_ssize_t n_f = w.shape[0], n_k = w.shape[1]
    cdef Py_ssize_t n_out = n_in - n_k + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n_batch, n_f, n_ch, n_out), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, f, c
    if out_arr.size == 0:
        return out_arr
    with nogil:
        for n in range(n_batch):
            for f in range(n_f):
                for c in range(n_ch):
                    _correlate_row(&x[n, c, 0], &w[f, 0], n_k, &out[n, f, c, 0], n_out, b[f])
    return out_arr


def conv_time_weight_grad(const floating[:, :, ::1] x, const floating[:, :, :, ::1] g):
    cdef Py_ssize_t n_batch = g.shape[0], n_f = g.shape[1], n_ch = g.shape[2], n_out = g.shape[3]
    cdef Py_ssize_t n_k = x.shape[2] - n_out + 1
    dtype = np.float32 if floating is float else np.float64
    # per-row partial sums in the input precision, totals in double
    gw_arr = np.zeros((n_f, n_k), dtype=np.float64)
    gb_arr = np.zeros(n_f, dtype=np.float64)
    acc_arr = np.empty((n_f, n_k), dtype=dtype)
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef floating[:, ::1] acc = acc_arr
    cdef Py_ssize_t n, f, c, t, k
    cdef floating gv, bias_acc
    cdef const floating* xr
    cdef floating* ar
    if gw_arr.size == 0:
        return gw_arr.astype(dtype), gb_arr.astype(dtype)
    with nogil:
        for n in range(n_batch):
            for c in range(n_ch):
                acc[:, :] = 0
                xr = &x[n, c, 0]
                for f in range(n_f):
                    ar = &acc[f, 0]
                    bias_acc = 0
                    for t in range(n_out):
                        gv = g[n, f, c, t]
                        bias_acc = bias_acc + gv
                        # contiguous axpy over the kernel taps
                        for k in range(n_k):
                            ar[k] = ar[k] + gv * xr[t + k]
                    gb[f] += bias_acc
                for f in range(n_f):
                    for k in range(n_k):
                        gw[f, k] += acc[f, k]
    return gw_arr.astype(dtype), gb_arr.astype(dtype)


def aggregate_windows(labels, starts, Py_ssize_t width, bint majority):
    cdef const signed char[::1] lab = np.ascontiguousarray(labels, dtype=np.int8)
    cdef const cnp.int64_t[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef Py_ssize_t n_win = st.shape[0]
    out_arr = np.empty(n_win, dtype=np.int8)
    cdef signed char[::1] out = out_arr
    cdef Py_ssize_t i, j, s, best_count
    cdef signed char v, first, result
    cdef bint uniform, oor
    cdef Py_ssize_t counts[N_LABELS]
    cdef Py_ssize_t last[N_LABELS]
    with nogil:
        for i in range(n_win):
            s = st[i]
            first = lab[s]
            uniform = True
            oor = False
            if majority:
                for j in range(N_LABELS):
                    counts[j] = 0
                    last[j] = -1
            for j in range(width):
                v = lab[s + j]
                if v < 0:
                    oor = True
                    break
                if v != first:
                    uniform = False
                if majority:
                    counts[v] += 1
                    last[v] = j
            if oor:
                out[i] = OUT_OF_RANGE
            elif not majority:
                out[i] = first if uniform else REJECTED
            else:
                best_count = 0
                for j in range(N_LABELS):
                    if counts[j] > best_count:
                        best_count = counts[j]
                result = 0
                s = -1
                for j in range(N_LABELS):
                    if counts[j] == best_count and last[j] > s:
                        s = last[j]
                        result = <signed char>j
                out[i] = result
    return out_arr
