"""Desk-scale experiments: sigma sweep, cache sweep, layout comparison, ratio knee."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import DiskIndex, SearchParams
from ..layout import LayoutReader
from ..planner import io_reduction, rank_nodes
from ..quantizer import measure_candidates, pick_compression_ratio
from ..vecio import compute_recall
from .runner import run_queries


@dataclass
class Point:
    D: int
    sigma: float
    recall: float
    ios: float
    search_reads: float
    refinement_reads: float
    hit_rate: float
    visited: float


def evaluate(index, queries, gt_ids, params: SearchParams, engine="two_stage",
             node_cache=None) -> Point:
    pt = run_queries(index, queries, params, engine, 1, node_cache)
    rs = pt.results
    st = [r.stats for r in rs]
    visited = sum(s.visited for s in st)
    return Point(params.D, params.sigma,
                 float(np.mean([compute_recall(r.ids, gt_ids[i], params.k) for i, r in enumerate(rs)])),
                 float(np.mean([s.total_reads for s in st])),
                 float(np.mean([s.search_stage_reads for s in st])),
                 float(np.mean([s.refinement_reads for s in st])),
                 sum(s.cache_hits for s in st) / visited if visited else 0.0,
                 visited / len(st))


def smallest_D_reaching(fn, target, k=10, ladder=(10, 16, 24, 32, 48, 64, 96, 128, 192, 256)):
    """Smallest queue size D with fn(D).recall >= target.

    A coarse ladder brackets the answer and bisection on integers finishes it.
    Recall is treated as monotone in D inside the bracket. Returns (point, all points).
    """
    seen = {}

    def at(D):
        if D not in seen:
            seen[D] = fn(D)
        return seen[D]

    lo = None
    hi = None
    for D in ladder:
        D = max(D, k)
        if at(D).recall >= target:
            hi = D
            break
        lo = D
    if hi is None:
        return None, sorted(seen.values(), key=lambda p: p.D)
    lo = k - 1 if lo is None else lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if at(mid).recall >= target:
            hi = mid
        else:
            lo = mid
    return seen[hi], sorted(seen.values(), key=lambda p: p.D)


def open_disk_index(desk, kind, graph_cache=None, nav=None) -> DiskIndex:
    return DiskIndex(LayoutReader(desk.layouts[kind]), desk.codebook, desk.codes,
                     desk.graph.entry, graph_cache or {}, {}, nav)


def full_graph_cache(g):
    return {u: g.adj(u).astype(np.int64) for u in range(g.count)}


def sigma_sweep(desk, Ds=(20, 100), sigmas=(0.25, 0.5, 1.0), beam_width=4, n_queries=None):
    """Recall for each (D, sigma) with every adjacency list in memory, so exact
    distances come only from the refinement stage."""
    qs = desk.queries.data[:n_queries]
    gt = desk.gt.ids[:n_queries]
    index = open_disk_index(desk, "graph_replicated", full_graph_cache(desk.graph))
    try:
        return [evaluate(index, qs, gt, SearchParams(k=desk.cfg.k, D=D, sigma=s,
                                                     beam_width=beam_width, use_nav=False))
                for D in Ds for s in sigmas]
    finally:
        index.close()


def cache_for_fraction(g, rank, fraction):
    sizes = 2 + 4 * g.degrees.astype(np.int64)
    n = int(np.searchsorted(np.cumsum(sizes[rank]), fraction * sizes.sum(), side="right"))
    return {int(u): g.adj(u).astype(np.int64) for u in rank[:n]}


@dataclass
class CachePoint:
    fraction: float
    hit_rate: float
    predicted: float
    measured: float
    ios: float
    recall: float

    @property
    def deviation(self):
        return abs(self.measured - self.predicted) / self.predicted if self.predicted else abs(self.measured)


def cache_sweep(desk, fractions=(0.25, 0.5, 0.9), D=100, sigma=0.5, n_queries=None,
                kind="flat", beam_width=1):
    """Measured total-read reduction against beta*(1 - sigma) for graph caches ranked by
    distance to the entry node. The uncached run of the same layout is the reference."""
    qs = desk.queries.data[:n_queries]
    gt = desk.gt.ids[:n_queries]
    rank = rank_nodes(desk.base, [desk.graph.entry])
    out = []
    base = None
    for f in (0.0,) + tuple(fractions):
        index = open_disk_index(desk, kind, cache_for_fraction(desk.graph, rank, f))
        try:
            p = evaluate(index, qs, gt, SearchParams(k=desk.cfg.k, D=D, sigma=sigma,
                                                     beam_width=beam_width, use_nav=False))
        finally:
            index.close()
        if base is None:
            base = p
        measured = (base.ios - p.ios) / base.ios
        out.append(CachePoint(f, p.hit_rate, io_reduction(p.hit_rate, sigma), measured,
                              p.ios, p.recall))
    return out


def layout_comparison(desk, target=0.9, sigmas=(0.5,), n_queries=None, beam_width=1):
    """Fewest mean reads per query at recall >= target: flat with the single-stage
    search against graph_replicated with the two-stage search; no memory caches."""
    qs = desk.queries.data[:n_queries]
    gt = desk.gt.ids[:n_queries]
    k = desk.cfg.k
    res = {}
    index = open_disk_index(desk, "flat")
    try:
        fn = lambda D: evaluate(index, qs, gt, SearchParams(k=k, D=D, sigma=1.0, beam_width=beam_width,  # noqa: E731
                                                            use_nav=False), "baseline")
        res[("flat", 1.0)] = smallest_D_reaching(fn, target, k)
    finally:
        index.close()
    index = open_disk_index(desk, "graph_replicated")
    try:
        for s in sigmas:
            fn = lambda D, s=s: evaluate(index, qs, gt, SearchParams(k=k, D=D, sigma=s,  # noqa: E731
                                                                     beam_width=beam_width,
                                                                     use_nav=False))
            res[("graph_replicated", s)] = smallest_D_reaching(fn, target, k)
    finally:
        index.close()
    return res


def ratio_knee(sample_ds, sample_queries, candidate_Ms, k=10, recall_target=0.9, seed=0):
    """Measured proxy for every candidate and the planner's pick."""
    points = measure_candidates(sample_ds, sample_queries, candidate_Ms, k=k,
                                recall_target=recall_target, seed=seed)
    pick = pick_compression_ratio(sample_ds, sample_queries, candidate_Ms, k=k,
                                  recall_target=recall_target, seed=seed)
    return points, pick
