"""Kernel backend selection and worker-thread policy.

Set ``X2CT_NUMBA=0`` to force the pure-numpy kernel implementations; by
default the numba-compiled versions are used whenever numba imports. Both
backends are written to produce bit-identical float64 output (see
tests/test_kernels.py), so the switch only affects speed.

``X2CT_THREADS`` caps the worker threads used for dataset generation.
"""

from __future__ import annotations

import os

try:
    from numba import njit  # noqa: F401
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    njit = None
    HAS_NUMBA = False


def numba_requested() -> bool:
    return os.environ.get("X2CT_NUMBA", "1") != "0"


USE_NUMBA = HAS_NUMBA and numba_requested()


def thread_count() -> int:
    avail = os.cpu_count() or 1
    raw = os.environ.get("X2CT_THREADS", "")
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap > 0:
        return max(1, min(cap, avail))
    return min(4, avail)
