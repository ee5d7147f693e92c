"""Worker-thread configuration for the compiled kernels.

Must be imported before numba so the thread ceiling can be raised above the
detected core count; renders stay bit-identical at any thread count, so
oversubscription is safe and lets thread-count reproducibility be tested on
small machines.
"""

from __future__ import annotations

import os
import sys

_CEILING = max(8, os.cpu_count() or 1)

if "numba" not in sys.modules:
    os.environ.setdefault("NUMBA_NUM_THREADS", str(_CEILING))
    # The built-in workqueue layer is always present and avoids noisy
    # probing of optional TBB/OpenMP backends at first kernel launch.
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numba


def max_threads() -> int:
    """Highest thread count that set_threads() will accept in this process."""
    return int(numba.config.NUMBA_NUM_THREADS)


def set_threads(n: int) -> int:
    """Set the kernel worker count, honoring the I4D_THREADS env cap.

    Returns the count actually applied.
    """
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    cap = os.environ.get("I4D_THREADS")
    if cap is not None:
        n = min(n, max(1, int(cap)))
    n = min(n, max_threads())
    numba.set_num_threads(n)
    return n


def get_threads() -> int:
    return int(numba.get_num_threads())


def default_threads() -> int:
    """Initial worker count: all visible cores, capped by I4D_THREADS."""
    return set_threads(os.cpu_count() or 1)
