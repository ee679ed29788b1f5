"""Choosing the PQ compression ratio by measured IO on a small sampled index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine.reference import reference_two_stage
from ..graph import build_graph
from ..vecio import VectorDataset, compute_recall, ground_truth
from .pq import encode, pq_memory_bytes, train_pq


def default_candidates(dims: int) -> list:
    """M in {dims/32, dims/16, dims/8, dims/4}, each clamped down to a divisor of dims."""
    out = set()
    for div in (32, 16, 8, 4):
        c = max(1, dims // div)
        while dims % c:
            c -= 1
        out.add(c)
    return sorted(out)


def sample_fraction(n: int, fraction: float = 0.01, K: int = 256, floor: int = 1000) -> float:
    """Sampling fraction for PQ training and ratio selection: ``fraction`` of the
    corpus, but at least max(K, floor) vectors when the corpus has that many."""
    if n <= 0:
        raise ValueError("empty corpus")
    return min(1.0, max(fraction, max(K, floor) / n))


def d_ladder(k: int, n: int) -> list:
    steps, d = [], k
    while d < n:
        steps.append(d)
        d = max(d + 1, int(round(d * 1.5)))
    steps.append(n)
    return steps


@dataclass
class ProxyPoint:
    M: int
    reads: float      # mean block reads per query at the first D reaching the target
    D: int
    recall: float


def io_proxy(ds: VectorDataset, graph, codebook, codes, queries, gt, k=10, recall_target=0.9,
             ladder=None, entries=None) -> ProxyPoint:
    """Mean per-query block reads at the smallest queue size that reaches recall_target.

    Runs the in-memory two-stage search with no caches and no packing, so every
    visited candidate costs one block read.
    """
    ladder = ladder or d_ladder(k, ds.count)
    qs = queries.data if isinstance(queries, VectorDataset) else np.asarray(queries)
    for D in ladder:
        D = max(D, k)
        recalls, reads = [], []
        for i, q in enumerate(qs):
            ent = entries(q) if callable(entries) else entries
            r = reference_two_stage(q, ds, graph, codebook, codes, D, 1.0, k, entries=ent)
            recalls.append(compute_recall(r.ids, gt.ids[i], k))
            reads.append(r.search_reads + r.refinement_reads)
        if np.mean(recalls) >= recall_target or D >= ds.count:
            return ProxyPoint(codebook.M, float(np.mean(reads)), D, float(np.mean(recalls)))
    raise AssertionError("unreachable: the ladder ends at the dataset size")


def measure_candidates(sample_ds, sample_queries, candidate_Ms, k=10, K=256, recall_target=0.9,
                       iters=15, seed=0, graph=None, R_deg=32, L_build=64):
    """IO proxy for every candidate M on the sampled index."""
    graph = graph or build_graph(sample_ds, R_deg=min(R_deg, max(2, sample_ds.count - 1)),
                                 L_build=L_build, seed=seed)
    K = min(K, sample_ds.count)
    gt = ground_truth(sample_ds, sample_queries, min(k, sample_ds.count))
    points = []
    for M in candidate_Ms:
        cb = train_pq(sample_ds, M, K, iters, seed)
        codes = encode(cb, sample_ds)
        points.append(io_proxy(sample_ds, graph, cb, codes, sample_queries, gt,
                               min(k, sample_ds.count), recall_target))
    return points


def pick_compression_ratio(sample_ds: VectorDataset, sample_queries, candidate_Ms=None,
                           budget_bytes=None, corpus_count=None, K=256, k=10, recall_target=0.9,
                           seed=0, graph=None, return_points=False):
    """Among candidates whose full-corpus codes fit the budget, the M with the fewest
    block reads per query at the recall target; ties go to the smaller M."""
    cands = sorted(candidate_Ms or default_candidates(sample_ds.dims))
    if any(m < 1 or m > sample_ds.dims for m in cands):
        raise ValueError(f"candidates must lie in [1, {sample_ds.dims}]")
    N = corpus_count or sample_ds.count
    if budget_bytes is not None:
        fits = [m for m in cands if pq_memory_bytes(N, m, K, sample_ds.dims) <= budget_bytes]
    else:
        fits = cands
    if not fits:
        need = pq_memory_bytes(N, cands[0], K, sample_ds.dims)
        raise ValueError(f"budget {budget_bytes} B cannot hold PQ codes for any candidate "
                         f"(smallest needs {need} B)")
    if len(fits) == 1:
        return (fits[0], []) if return_points else fits[0]
    points = measure_candidates(sample_ds, sample_queries, fits, k, K, recall_target,
                                seed=seed, graph=graph)
    best = min(points, key=lambda p: (p.reads, p.M))
    return (best.M, points) if return_points else best.M


def compression_ratio(dims, scalar_size, M) -> float:
    return dims * scalar_size / M

