"""Block prefetch pipeline: a loading queue of in-flight reads and a ready queue."""

from __future__ import annotations

from collections import deque
from concurrent.futures import FIRST_COMPLETED, wait

from ..layout import LayoutError

IO_MODES = ("sync", "async", "async_deterministic")


class BlockReadError(RuntimeError):
    pass


class PrefetchQueues:
    """Per-query queues. Reads are submitted without blocking (except in sync
    mode, where a request is read when it is consumed); ``next_ready`` hands
    out each completed block exactly once.

    async_deterministic consumes in issue order, async in completion order.
    """

    def __init__(self, reader, mode="sync", executor=None):
        if mode not in IO_MODES:
            raise ValueError(f"unknown io mode {mode!r}")
        if mode != "sync" and executor is None:
            raise ValueError(f"io mode {mode!r} needs an executor")
        self.reader = reader
        self.mode = mode
        self.executor = executor
        self.loading = deque()  # (node, future | None)
        self.ready = deque()    # (node, block index, raw bytes)

    def __len__(self):
        return len(self.loading) + len(self.ready)

    def submit(self, node: int):
        fut = None if self.mode == "sync" else self.executor.submit(self.reader.read_raw, node)
        self.loading.append((node, fut))

    def _result(self, node, fut):
        try:
            return fut.result() if fut is not None else self.reader.read_raw(node)
        except (OSError, LayoutError) as e:
            raise BlockReadError(f"block read for node {node} failed: {e}") from e

    def _collect(self):
        if self.mode == "async":
            if not any(f.done() for _, f in self.loading):
                wait([f for _, f in self.loading], return_when=FIRST_COMPLETED)
            still = deque()
            for node, fut in self.loading:
                if fut.done():
                    self.ready.append((node, *self._result(node, fut)))
                else:
                    still.append((node, fut))
            self.loading = still
        else:
            node, fut = self.loading.popleft()
            self.ready.append((node, *self._result(node, fut)))

    def next_ready(self):
        """Block until one block is ready; returns (node, parsed block)."""
        if not self.ready:
            if not self.loading:
                raise IndexError("no outstanding block requests")
            self._collect()
        node, b, raw = self.ready.popleft()
        return node, self.reader.parse(b, raw)

    def drain(self):
        for _, fut in self.loading:
            if fut is not None:
                fut.cancel()
        self.loading.clear()
        self.ready.clear()


def refine_batch(ids, reader, mode="sync", executor=None, on_vector=None):
    """Read exact vectors for ``ids``: submit every read, then handle each as it completes.

    Returns {id: vector}; ``on_vector(id, vector)`` is called per completion.
    """
    out = {}
    if not ids:
        return out
    if mode == "sync":
        for u in ids:
            try:
                nb = reader.node_from(reader.read_block(u), u)
            except (OSError, LayoutError) as e:
                raise BlockReadError(f"refinement read for node {u} failed: {e}") from e
            out[u] = nb.vector
            if on_vector:
                on_vector(u, nb.vector)
        return out
    futs = {executor.submit(reader.read_raw, u): u for u in ids}
    pending = set(futs)
    order = list(futs)
    while pending:
        done, pending = wait(pending, return_when=FIRST_COMPLETED)
        # issue order within a completion wave keeps async_deterministic reproducible
        for fut in (f for f in order if f in done):
            u = futs[fut]
            try:
                b, raw = fut.result()
            except (OSError, LayoutError) as e:
                for f in pending:
                    f.cancel()
                raise BlockReadError(f"refinement read for node {u} failed: {e}") from e
            nb = reader.node_from(reader.parse(b, raw), u)
            out[u] = nb.vector
            if on_vector:
                on_vector(u, nb.vector)
    return out
