"""Process-level performance knobs.

The fitting loops churn through short-lived ~100KB-1MB numpy temporaries.
With glibc defaults those come from fresh mmap regions that are unmapped on
free, so every optimizer step pays page-fault costs again; raising the mmap
and trim thresholds keeps the buffers on the heap for reuse. No-op on
non-glibc platforms.
"""

from __future__ import annotations

import ctypes

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3

_done = False


def tune_allocator(threshold: int = 1 << 30) -> bool:
    """Keep large allocations on the heap; returns True if applied."""
    global _done
    if _done:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(_M_MMAP_THRESHOLD, threshold)
        libc.mallopt(_M_TRIM_THRESHOLD, threshold)
        _done = True
        return True
    except (OSError, AttributeError):
        return False
