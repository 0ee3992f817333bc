"""Thread-pool helper honouring ``BELT_THREADS``."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ValidationError


def worker_count(n_tasks, threads=None):
    """Resolve the worker count: explicit argument, then ``BELT_THREADS``, then auto.

    ``0`` means auto (one worker per CPU, capped by the number of tasks).
    """
    if threads is None:
        raw = os.environ.get("BELT_THREADS", "0").strip() or "0"
        try:
            threads = int(raw)
        except ValueError:
            raise ValidationError(f"BELT_THREADS must be an integer, got {raw!r}") from None
    if threads < 0:
        raise ValidationError(f"thread count must be >= 0, got {threads}")
    if threads == 0:
        threads = os.cpu_count() or 1
    return max(1, min(threads, n_tasks))


def ordered_map(fn, items, threads=None):
    """``[fn(x) for x in items]``, possibly concurrent; results keep input order.

    Exceptions are returned in place of results rather than raised, so a
    single failing task never hides the others.
    """
    items = list(items)

    def call(x):
        try:
            return fn(x)
        except Exception as exc:  # noqa: BLE001 - caller decides what is fatal
            return exc

    workers = worker_count(len(items), threads) if items else 1
    if workers == 1:
        return [call(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(call, items))
