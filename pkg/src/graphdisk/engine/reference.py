"""In-memory re-implementation of the two-stage search, with no IO layer.

Used as an oracle for the disk engine and as the cheap IO-count proxy during
planning. Processes one candidate at a time (beam width 1) and fully re-sorts
the candidate list after every expansion, exactly as the algorithm is written.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..quantizer.pq import build_lut
from ..vecio import distance, prepare_query


@dataclass
class ReferenceResult:
    ids: list
    dists: list
    search_reads: int
    refinement_reads: int
    cache_hits: int
    visited: int


def reference_two_stage(query, ds, g, codebook, codes, D, sigma=1.0, k=10, entries=None,
                        graph_cache=frozenset(), packed=None, node_cache=frozenset()):
    q = prepare_query(query, ds.metric)
    lut = build_lut(codebook, q)
    M = np.arange(codebook.M)

    def approx(v):
        return float(lut[M, codes[v]].sum())

    def exact(v):
        return distance(ds.data[v], q, ds.metric)

    appr = []          # [dist, id, visited]
    seen = set()
    expanded = set()
    ext = {}
    reads = hits = visited = 0

    def expand(u):
        expanded.add(u)
        for v in g.adj(u).tolist():
            if v not in seen:
                seen.add(v)
                appr.append([approx(v), v, False])
        appr.sort(key=lambda e: (e[0], e[1]))
        del appr[D:]

    for e in (entries if entries is not None else [g.entry]):
        e = int(e)
        if e not in seen:
            seen.add(e)
            appr.append([approx(e), e, False])
    appr.sort(key=lambda e: (e[0], e[1]))
    del appr[D:]

    while True:
        cand = next((e for e in appr if not e[2]), None)
        if cand is None:
            break
        cand[2] = True
        u = cand[1]
        visited += 1
        if u in graph_cache:
            hits += 1
            expand(u)
            continue
        if u in expanded:
            continue
        reads += 1
        ext[u] = exact(u)
        expand(u)
        if packed is not None:
            in_list = {e[1] for e in appr}
            for v in packed[u]:
                if v in in_list and v not in expanded:
                    expand(v)
                    in_list = {e[1] for e in appr}

    D_r = math.ceil(sigma * D)
    top = appr[:D_r]
    refine = 0
    for _, u, _ in top:
        if u not in ext:
            if u not in node_cache:
                refine += 1
            ext[u] = exact(u)
    final = sorted(((d, u) for u, d in ext.items()))[:k]
    ids = [u for _, u in final]
    dists = [d for d, _ in final]
    if len(ids) < k:
        for d, u, _ in appr:
            if len(ids) >= k:
                break
            if u not in ext:
                ids.append(u)
                dists.append(d)
    return ReferenceResult(ids, dists, reads, refine, hits, visited)
