"""Stable hashing helpers and runtime tuning shared across the package."""

from __future__ import annotations

import ctypes
import ctypes.util
import hashlib

_M_TRIM_THRESHOLD = -1
_M_MMAP_MAX = -4
_malloc_tuned = False


def tune_malloc() -> bool:
    """Keep large numpy temporaries on the heap instead of mmap churn.

    Training allocates multi-MB attention temporaries every step; with
    glibc's default mmap threshold each step pays fresh page faults
    (measured ~2.5x slowdown). mallopt is glibc-specific; failures are
    silently ignored on other libcs.
    """
    global _malloc_tuned
    if _malloc_tuned:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6",
                           use_errno=True)
        libc.mallopt(_M_MMAP_MAX, 0)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
        _malloc_tuned = True
    except (OSError, AttributeError):
        _malloc_tuned = False
    return _malloc_tuned


def stable_hash(*parts) -> int:
    """64-bit hash of the stringified parts; stable across runs and platforms."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_seed(*parts) -> int:
    """Independent RNG seed derived from structured parts (fits in 63 bits)."""
    return stable_hash("seed", *parts) >> 1
