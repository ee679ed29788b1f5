"""Disk-backed query execution: two-stage search and the single-stage baseline."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..graph import NearestList
from ..quantizer.pq import PQCodebook, build_lut
from ..vecio import distance, prepare_query
from .prefetch import IO_MODES, PrefetchQueues, refine_batch

IO_MODE_ENV = "GRAPHDISK_IO_MODE"


@dataclass(frozen=True)
class SearchParams:
    k: int = 10
    D: int = 100
    sigma: float = 0.5
    beam_width: int = 4
    use_nav: bool = True
    io_mode: str = "sync"
    nav_L: int = 16

    def __post_init__(self):
        if not 1 <= self.k <= self.D:
            raise ValueError(f"need 1 <= k <= D, got k={self.k}, D={self.D}")
        if not 0 < self.sigma <= 1:
            raise ValueError(f"sigma must be in (0, 1], got {self.sigma}")
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")
        if self.io_mode not in IO_MODES:
            raise ValueError(f"unknown io mode {self.io_mode!r}")

    @property
    def D_r(self) -> int:
        return math.ceil(self.sigma * self.D)

    def with_env(self):
        mode = os.environ.get(IO_MODE_ENV)
        if mode and mode != self.io_mode:
            from dataclasses import replace
            return replace(self, io_mode=mode)
        return self


@dataclass
class IOStats:
    search_stage_reads: int = 0
    refinement_reads: int = 0
    cache_hits: int = 0        # graph-cache (or baseline node-cache) hits in the search stage
    nav_hops: int = 0
    node_cache_hits: int = 0   # refinement served from the node cache
    packed_hits: int = 0       # candidates whose adjacency came from a packed copy
    visited: int = 0

    @property
    def total_reads(self) -> int:
        return self.search_stage_reads + self.refinement_reads

    def as_dict(self):
        return asdict(self)


@dataclass
class SearchResult:
    ids: list
    dists: list
    stats: IOStats
    latency_ns: int = 0


@dataclass
class DiskIndex:
    """Everything a query needs: block reader, PQ state and the memory caches."""

    reader: object
    codebook: PQCodebook
    codes: np.ndarray
    entry: int
    graph_cache: dict = field(default_factory=dict)   # id -> adjacency
    node_cache: dict = field(default_factory=dict)    # id -> vector (two-stage)
    nav: object = None                                 # has .search(query, L) -> (ids, hops)
    io_threads: int = 16
    _executor: ThreadPoolExecutor = field(default=None, repr=False)

    @property
    def metric(self):
        return self.codebook.metric

    def executor(self):
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.io_threads,
                                                thread_name_prefix="blockio")
        return self._executor

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        self.reader.close()


class _Traversal:
    """Per-query private state shared by both search procedures."""

    def __init__(self, index, q, D):
        self.index = index
        self.q = q
        self.lut = build_lut(index.codebook, q)
        self.m_idx = np.arange(index.codebook.M)
        self.codes = index.codes
        self.L = NearestList(D)
        self.seen = set()
        self.expanded = set()
        self.ext = {}

    def seed(self, ids):
        fresh = [int(v) for v in ids if int(v) not in self.seen]
        self._insert(fresh)

    def _insert(self, fresh):
        if not fresh:
            return
        self.seen.update(fresh)
        d = self.lut[self.m_idx, self.codes[fresh]].sum(axis=1)
        L = self.L
        if len(L) == L.capacity:
            # a full list only admits candidates strictly ahead of its last entry
            worst = L.items[-1][0]
            keep = np.flatnonzero(d <= worst)
            fresh = [fresh[i] for i in keep.tolist()]
            d = d[keep]
        ins = L.insert
        for v, dv in zip(fresh, d.tolist()):
            ins(v, dv)

    def expand(self, u, adj):
        """Add unseen neighbors with approximate distances, keep the top-D."""
        self.expanded.add(u)
        seen = self.seen
        self._insert([v for v in adj.tolist() if v not in seen])

    def exact(self, vec):
        return distance(vec, self.q, self.index.metric)

    def results(self, k):
        final = sorted((d, u) for u, d in self.ext.items())[:k]
        ids = [u for _, u in final]
        dists = [d for d, _ in final]
        if len(ids) < k:
            # fewer exact distances than k: fill in approximate order
            for d, u in self.L.items:
                if len(ids) >= k:
                    break
                if u not in self.ext:
                    ids.append(u)
                    dists.append(d)
        return ids, dists


def _entries(index, q, params, st):
    if params.use_nav and index.nav is not None:
        ids, hops = index.nav.search(q, params.nav_L)
        st.nav_hops = hops
        return ids
    return [index.entry]


def search_two_stage(query, params: SearchParams, index: DiskIndex) -> SearchResult:
    """Search stage over cached/packed/disk adjacency, then exact re-ranking of the top D_r."""
    t0 = time.perf_counter_ns()
    params = params.with_env()
    q = prepare_query(query, index.metric)
    st = IOStats()
    tr = _Traversal(index, q, params.D)
    tr.seed(_entries(index, q, params, st))
    reader = index.reader
    gc = index.graph_cache
    L = tr.L
    queues = PrefetchQueues(reader, params.io_mode,
                            index.executor() if params.io_mode != "sync" else None)
    try:
        while True:
            while len(queues) < params.beam_width:
                u = L.next_unvisited()
                if u is None:
                    break
                L.mark_visited(u)
                st.visited += 1
                adj = gc.get(u)
                if adj is not None:
                    st.cache_hits += 1
                    tr.expand(u, adj)
                elif u in tr.expanded:
                    st.packed_hits += 1
                else:
                    queues.submit(u)
            if not len(queues):
                break
            u, parsed = queues.next_ready()
            st.search_stage_reads += 1
            nb = reader.node_from(parsed, u)
            tr.ext[u] = tr.exact(nb.vector)
            tr.expand(u, nb.adjacency)
            packed = nb.packed
            ids = packed.ids if hasattr(packed, "ids") else [v for v, _ in packed]
            for i, v in enumerate(ids):
                if v in L and v not in tr.expanded:
                    tr.expand(v, packed.adjacency(i) if hasattr(packed, "adjacency")
                              else packed[i][1])
    finally:
        queues.drain()

    need = []
    for _, u in L.items[:params.D_r]:
        if u in tr.ext:
            continue
        vec = index.node_cache.get(u)
        if vec is not None:
            st.node_cache_hits += 1
            tr.ext[u] = tr.exact(vec)
        else:
            need.append(u)
    if need:
        vecs = refine_batch(need, reader, params.io_mode,
                            index.executor() if params.io_mode != "sync" else None)
        st.refinement_reads += len(need)
        for u in need:
            tr.ext[u] = tr.exact(vecs[u])
    ids, dists = tr.results(params.k)
    return SearchResult(ids, dists, st, time.perf_counter_ns() - t0)


def search_baseline(query, params: SearchParams, index: DiskIndex, node_cache=None) -> SearchResult:
    """Single-stage search: every candidate's exact distance is computed from its block.

    ``node_cache`` maps id -> (vector, adjacency); hits skip the block read.
    """
    t0 = time.perf_counter_ns()
    params = params.with_env()
    q = prepare_query(query, index.metric)
    st = IOStats()
    tr = _Traversal(index, q, params.D)
    tr.seed(_entries(index, q, params, st))
    nc = node_cache if node_cache is not None else {}
    reader = index.reader
    L = tr.L
    queues = PrefetchQueues(reader, params.io_mode,
                            index.executor() if params.io_mode != "sync" else None)
    try:
        while True:
            while len(queues) < params.beam_width:
                u = L.next_unvisited()
                if u is None:
                    break
                L.mark_visited(u)
                st.visited += 1
                hit = nc.get(u)
                if hit is not None:
                    st.cache_hits += 1
                    tr.ext[u] = tr.exact(hit[0])
                    tr.expand(u, hit[1])
                else:
                    queues.submit(u)
            if not len(queues):
                break
            u, parsed = queues.next_ready()
            st.search_stage_reads += 1
            nb = reader.node_from(parsed, u)
            tr.ext[u] = tr.exact(nb.vector)
            tr.expand(u, nb.adjacency)
    finally:
        queues.drain()
    ids, dists = tr.results(params.k)
    return SearchResult(ids, dists, st, time.perf_counter_ns() - t0)
