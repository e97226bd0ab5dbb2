"""Shared helpers: seeded RNG streams, thread fan-out, CSV formatting, regression."""

from __future__ import annotations

import csv
import io
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import linregress

_THREADS = None


def rng_stream(seed: int, name: str = "") -> np.random.Generator:
    """Independent generator for (seed, name); same inputs give the same stream."""
    if seed is None:
        raise ValueError("seed is required")
    key = (zlib.crc32(name.encode()),) if name else ()
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def set_threads(n: int | None) -> None:
    global _THREADS
    _THREADS = n


def thread_count() -> int:
    if _THREADS:
        return _THREADS
    env = os.environ.get("FRAQDIM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Iterable) -> list:
    """Order-preserving map over a thread pool (serial when one thread)."""
    items = list(items)
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def fmt(x) -> str:
    """Locale-free real formatting with 17 significant digits."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def linfit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and slope standard error (nan for two points)."""
    fit = linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    stderr = float(fit.stderr) if np.size(x) > 2 else float("nan")
    return float(fit.slope), float(fit.intercept), stderr
