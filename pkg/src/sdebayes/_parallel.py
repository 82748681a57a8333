"""Deterministic thread-pool helper.

Work items are pre-assigned to contiguous chunks and results are gathered
in submission order, so outputs are identical for any worker count; the
speedup comes from kernels that release the GIL (compiled backend).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


class WorkerPool:
    """Maps chunked work over a fixed-size thread pool; 1 worker runs inline."""

    def __init__(self, workers=1):
        self.workers = max(1, int(workers))
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def map_chunks(self, chunk_fn, items):
        """chunk_fn(list-of-items) -> list-of-results; returns concatenated
        results in the original item order."""
        items = list(items)
        if self._pool is None or len(items) <= 1:
            return chunk_fn(items)
        k = min(self.workers, len(items))
        bounds = [round(i * len(items) / k) for i in range(k + 1)]
        chunks = [items[bounds[i] : bounds[i + 1]] for i in range(k)]
        out = []
        for part in self._pool.map(chunk_fn, chunks):
            out.extend(part)
        return out

    def run_all(self, fns):
        """Run zero-argument callables, returning results in order."""
        return self.map_chunks(lambda chunk: [fn() for fn in chunk], fns)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
