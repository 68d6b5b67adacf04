import os

import numba


def configure_threads() -> int:
    """Apply the SLOWQ_THREADS cap to numba's worker pool."""
    limit = numba.config.NUMBA_NUM_THREADS
    raw = os.environ.get("SLOWQ_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            n = limit
        limit = max(1, min(n, limit))
    numba.set_num_threads(limit)
    return limit
