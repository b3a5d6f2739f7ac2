"""Timing harness for voxel-grid encoding."""

import time

import numpy as np

from .encode import voxel_grid
from .events import EventStream

DEFAULT_GEOMETRY = (346, 260)  # (width, height)


def synthetic_stream(n_events, width=DEFAULT_GEOMETRY[0], height=DEFAULT_GEOMETRY[1], duration_us=1_000_000, seed=0):
    """Uniformly scattered events with sorted timestamps; generation is not timed."""
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, duration_us + 1, n_events)).astype(np.int64)
    x = rng.integers(0, width, n_events).astype(np.int32)
    y = rng.integers(0, height, n_events).astype(np.int32)
    p = np.where(rng.random(n_events) < 0.5, -1, 1).astype(np.int8)
    return EventStream(t, x, y, p, width, height, 0, duration_us)


def bench_encode(stream: EventStream, bins=3, repeats=20, warmup=3, threads=1, dtype=np.float32):
    """Median / p95 wall time of one ``voxel_grid`` call; warmup runs are discarded."""
    times = []
    for i in range(warmup + repeats):
        t0 = time.perf_counter()
        voxel_grid(stream, bins=bins, threads=threads, dtype=dtype)
        dt = time.perf_counter() - t0
        if i >= warmup:
            times.append(dt)
    times = np.array(times)
    median = float(np.median(times)) if times.size else 0.0
    return {
        "events": len(stream),
        "width": stream.width,
        "height": stream.height,
        "bins": bins,
        "threads": threads,
        "repeats": int(times.size),
        "median_ms": median * 1e3,
        "p95_ms": float(np.percentile(times, 95)) * 1e3 if times.size else 0.0,
        "events_per_s": len(stream) / median if median > 0 else 0.0,
    }


def parallel_max_diff(stream: EventStream, bins=3, threads=4, chunk_size=1 << 18):
    """Largest absolute difference between the sequential and chunked-parallel grids."""
    a = voxel_grid(stream, bins=bins).data
    b = voxel_grid(stream, bins=bins, threads=threads, chunk_size=chunk_size).data
    return float(np.max(np.abs(a - b))) if a.size else 0.0


__all__ = ["bench_encode", "parallel_max_diff", "synthetic_stream"]
