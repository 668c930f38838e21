"""Process-level runtime knobs.

SPHNN_THREADS caps parallelism for the numerical kernels.  The arrays in
this package are small (64-wide layers, a few thousand paths), where BLAS
thread fan-out costs more than it buys, so the default cap is 1; heavy
entry points (training, Monte-Carlo ensembles) pin their BLAS pools to the
cap for their duration.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from threadpoolctl import threadpool_limits


def thread_cap() -> int:
    raw = os.environ.get("SPHNN_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)


@contextmanager
def capped_threads():
    with threadpool_limits(limits=thread_cap()):
        yield
