# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled packet-path kernels; semantics identical to _pure.py.

cdivision is safe here: every quotient has positive operands.
"""

import numpy as np

from libc.stdint cimport int64_t, uint32_t

UBYTES_PER_BYTE = 1_000_000


def shaped_arrivals(send_us, sizes, int64_t rate_bytes_per_s, int64_t cap_ub,
                    int64_t tokens_ub, int64_t clock_us, int64_t delay_us):
    cdef int64_t[::1] send = np.ascontiguousarray(send_us, dtype=np.int64)
    cdef int64_t[::1] size = np.ascontiguousarray(sizes, dtype=np.int64)
    out_arr = np.empty(send.shape[0], dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef Py_ssize_t i, n = send.shape[0]
    cdef int64_t start, dt, need_dt, size_ub, need, wait

    if rate_bytes_per_s == 0:
        for i in range(n):
            out[i] = send[i] + delay_us
        return out_arr, tokens_ub, clock_us

    for i in range(n):
        start = send[i] if send[i] > clock_us else clock_us
        dt = start - clock_us
        if dt > 0 and tokens_ub < cap_ub:
            need_dt = (cap_ub - tokens_ub + rate_bytes_per_s - 1) // rate_bytes_per_s
            if dt >= need_dt:
                tokens_ub = cap_ub
            else:
                tokens_ub += rate_bytes_per_s * dt
        size_ub = size[i] * 1_000_000
        if tokens_ub >= size_ub:
            clock_us = start
            tokens_ub -= size_ub
        else:
            need = size_ub - tokens_ub
            wait = (need + rate_bytes_per_s - 1) // rate_bytes_per_s
            clock_us = start + wait
            tokens_ub = tokens_ub + rate_bytes_per_s * wait - size_ub
        out[i] = clock_us + delay_us
    return out_arr, tokens_ub, clock_us


def classify_marks(marks, filter_marks, filter_masks):
    cdef uint32_t[::1] m = np.ascontiguousarray(marks, dtype=np.uint32)
    cdef uint32_t[::1] fmark = np.ascontiguousarray(filter_marks, dtype=np.uint32)
    cdef uint32_t[::1] fmask = np.ascontiguousarray(filter_masks, dtype=np.uint32)
    out_arr = np.full(m.shape[0], -1, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef Py_ssize_t i, j, n = m.shape[0], k = fmark.shape[0]
    for i in range(n):
        for j in range(k):
            if (m[i] & fmask[j]) == fmark[j]:
                out[i] = j
                break
    return out_arr
