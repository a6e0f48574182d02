"""Thread-count control for the numba kernels.

Every kernel writes disjoint output slots or sums integers, so results do not
depend on the thread count.
"""

from __future__ import annotations

import logging
import os

import numba

logger = logging.getLogger(__name__)

THREADS_ENV = "RASIM_THREADS"


def available_threads() -> int:
    return numba.config.NUMBA_NUM_THREADS


def set_threads(n: int | None = None) -> int:
    """Cap kernel parallelism at ``n`` threads (env fallback, then all cores).

    Requests above the pool size are clamped. Returns the count in effect.
    """
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else available_threads()
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    effective = min(n, available_threads())
    if effective != n:
        logger.info("requested %d threads, pool has %d", n, effective)
    numba.set_num_threads(effective)
    return effective
