"""Pure-Python packet-path kernels.

These are the reference semantics; the compiled twin in ``_speedups.pyx``
must agree bit-for-bit. All virtual time is integer microseconds and token
state is integer micro-bytes (1 byte = 1_000_000 micro-bytes), so identical
inputs produce identical outputs on every path.
"""
from __future__ import annotations

import numpy as np

UBYTES_PER_BYTE = 1_000_000


def shaper_step(tokens_ub, clock_us, send_us, size_bytes, rate_bytes_per_s, cap_ub):
    """Advance one token-bucket shaper by a single packet.

    ``rate_bytes_per_s`` doubles as micro-bytes per microsecond, which keeps
    the refill arithmetic exactly integral. Returns
    ``(departure_us, tokens_ub, clock_us)``. FIFO is enforced by starting the
    packet no earlier than the previous departure (``clock_us``).
    """
    start = send_us if send_us > clock_us else clock_us
    dt = start - clock_us
    if dt > 0 and tokens_ub < cap_ub:
        # Cap the multiplication: beyond need_dt the bucket is full anyway.
        need_dt = (cap_ub - tokens_ub + rate_bytes_per_s - 1) // rate_bytes_per_s
        if dt >= need_dt:
            tokens_ub = cap_ub
        else:
            tokens_ub += rate_bytes_per_s * dt
    size_ub = size_bytes * UBYTES_PER_BYTE
    if tokens_ub >= size_ub:
        departure = start
        tokens_ub -= size_ub
    else:
        # Fluid view: the packet leaves once the missing tokens have accrued,
        # rounded up to the next whole microsecond; the surplus is kept.
        need = size_ub - tokens_ub
        wait = (need + rate_bytes_per_s - 1) // rate_bytes_per_s
        departure = start + wait
        tokens_ub = tokens_ub + rate_bytes_per_s * wait - size_ub
    return departure, tokens_ub, departure


def shaped_arrivals(send_us, sizes, rate_bytes_per_s, cap_ub, tokens_ub, clock_us, delay_us):
    """Compute arrival times for a send-ordered packet batch on one flow.

    ``rate_bytes_per_s == 0`` means unlimited: arrival is send + delay.
    Returns ``(arrivals, tokens_ub, clock_us)`` with the final shaper state.
    """
    send_us = np.asarray(send_us, dtype=np.int64)
    sizes = np.asarray(sizes, dtype=np.int64)
    out = np.empty(len(send_us), dtype=np.int64)
    if rate_bytes_per_s == 0:
        np.add(send_us, delay_us, out=out)
        return out, tokens_ub, clock_us
    for i in range(len(send_us)):
        departure, tokens_ub, clock_us = shaper_step(
            tokens_ub, clock_us, int(send_us[i]), int(sizes[i]), rate_bytes_per_s, cap_ub
        )
        out[i] = departure + delay_us
    return out, tokens_ub, clock_us


def classify_marks(marks, filter_marks, filter_masks):
    """First-match classification of packet marks against ordered filters.

    Returns an int64 array of filter indices, -1 where nothing matched.
    """
    marks = np.asarray(marks, dtype=np.uint32)
    filter_marks = np.asarray(filter_marks, dtype=np.uint32)
    filter_masks = np.asarray(filter_masks, dtype=np.uint32)
    out = np.full(len(marks), -1, dtype=np.int64)
    unmatched = np.ones(len(marks), dtype=bool)
    for i in range(len(filter_marks)):
        hit = unmatched & ((marks & filter_masks[i]) == filter_marks[i])
        out[hit] = i
        unmatched &= ~hit
        if not unmatched.any():
            break
    return out
