"""Packet-path kernels with import-time implementation selection.

``shaped_arrivals`` and ``classify_marks`` come from the compiled extension
when it built successfully, else from the pure-Python reference. Set
``QOSBRIDGE_PURE=1`` to force the fallback (used by the parity tests and the
benchmark).
"""
from __future__ import annotations

import os

from . import _pure
from ._pure import UBYTES_PER_BYTE, shaper_step  # noqa: F401  (scalar path is always pure)

if os.environ.get("QOSBRIDGE_PURE") == "1":
    _impl = _pure
    KERNEL_IMPL = "pure"
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]

        KERNEL_IMPL = "compiled"
    except ImportError:
        _impl = _pure
        KERNEL_IMPL = "pure"

shaped_arrivals = _impl.shaped_arrivals
classify_marks = _impl.classify_marks
