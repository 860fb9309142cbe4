"""Small shared helpers: parallel maps and deterministic formatting."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

FLOAT_FMT = "%.12e"


def effective_jobs(jobs=None) -> int:
    """Resolve a parallelism degree; LATTICE_HOMOG_JOBS overrides."""
    env = os.environ.get("LATTICE_HOMOG_JOBS")
    if env is not None:
        return max(1, int(env))
    if jobs is None:
        return os.cpu_count() or 1
    return max(1, int(jobs))


def parallel_map(fn, items, jobs=None):
    """Order-preserving map, threaded when jobs > 1.

    The hot loops this backs are numpy eigensolves/factorizations which
    release the GIL, so threads are enough.
    """
    items = list(items)
    jobs = effective_jobs(jobs)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def fmt_float(x: float) -> str:
    return FLOAT_FMT % float(x)


def json_ready(obj):
    """Recursively convert numpy scalars/arrays and round floats so the
    serialized text is deterministic across runs."""
    import numpy as np

    if isinstance(obj, dict):
        return {k: json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return json_ready(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(fmt_float(float(obj)))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj
