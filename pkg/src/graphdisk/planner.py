"""Memory planning: compression ratio, navigation index, graph cache then node cache.

Also holds the closed-form cache/block models used to sanity-check measurements.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import ProximityGraph, build_graph, greedy_search
from .quantizer.pq import encode, pq_memory_bytes, train_pq
from .quantizer.ratio import (default_candidates, io_proxy, pick_compression_ratio,
                             sample_fraction)
from .vecio import VectorDataset, ground_truth, sample_dataset

PLAN_MAGIC = b"GDPLAN01"


# -- analytical models ------------------------------------------------------

def io_reduction(beta: float, sigma: float) -> float:
    """Fraction of the D uncached accesses saved by an adjacency cache with hit rate beta."""
    if not (0.0 <= beta <= 1.0 and 0.0 <= sigma <= 1.0):
        raise ValueError(f"beta and sigma must lie in [0, 1], got {beta}, {sigma}")
    return beta * (1.0 - sigma)


def expected_reads(D: float, beta: float, sigma: float) -> float:
    """Total accesses with the adjacency cache: D(1-beta) + sigma*D*beta."""
    return D * (1.0 - beta) + sigma * D * beta


def _check_sigma(sigma):
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie strictly inside (0, 1), got {sigma}")


def adjacency_cache_wins(S_v: float, S_a: float, sigma: float) -> bool:
    """S_a < (1 - sigma)/sigma * S_v."""
    if S_v <= 0 or S_a <= 0:
        raise ValueError("sizes must be positive")
    _check_sigma(sigma)
    return S_a < (1.0 - sigma) / sigma * S_v


def memory_cache_wins(C: float, N: float, S_v: float, S_a: float, sigma: float) -> bool:
    """Unreduced comparison: adjacency-only cache saves more IO than an adjacency+vector cache."""
    _check_sigma(sigma)
    coupled = C / (N * (S_v + S_a))
    adjacency_only = C * (1.0 - sigma) / (N * S_a)
    return coupled < adjacency_only


def replicated_block_wins(B: float, S_v: float, S_a: float, sigma: float, theta: float = 1.0) -> bool:
    """Unreduced comparison of IO avoided per block read: replicated adjacency vs co-located nodes."""
    _check_sigma(sigma)
    free = B - S_v - S_a
    colocated = theta * free / (S_v + S_a)
    replicated = (1.0 - sigma) * theta * free / S_a
    return colocated < replicated


# -- navigation index -------------------------------------------------------

@dataclass(eq=False)
class NavIndex:
    sample: VectorDataset
    graph: ProximityGraph
    id_map: np.ndarray
    seed: int = 0
    fraction: float = 0.005

    def nbytes(self) -> int:
        return (self.sample.count * self.sample.vector_bytes + self.graph.total_adjacency_bytes()
                + 4 * self.sample.count)

    def search(self, query, L: int = 16):
        """Corpus ids of the nav-graph search result and the number of nav nodes visited."""
        lst, visited = greedy_search(self.graph, self.sample, query, L)
        return [int(self.id_map[i]) for i in lst.ids()], len(visited)


def build_nav_index(ds: VectorDataset, fraction: float = 0.005, seed: int = 0,
                    R_deg: int = 32, L_build: int = 64, ids=None) -> NavIndex:
    if ids is None:
        sample, ids = sample_dataset(ds, fraction, seed)
    else:
        ids = np.asarray(ids, dtype=np.int64)
        sample = VectorDataset(ds.data[ids], ds.scalar, ds.metric)
    R = min(R_deg, max(2, sample.count - 1))
    g = build_graph(sample, R_deg=R, L_build=max(L_build, R), seed=seed)
    return NavIndex(sample, g, ids, seed, fraction)


# -- cache selection --------------------------------------------------------

def rank_nodes(ds: VectorDataset, anchors, chunk: int = 8192) -> np.ndarray:
    """All node ids ordered by exact minimum distance to the anchor nodes (ties: smaller id)."""
    anchors = np.asarray(anchors, dtype=np.int64)
    a = ds.data[anchors].astype(np.float64)
    best = np.empty(ds.count, dtype=np.float64)
    a_sq = np.einsum("ij,ij->i", a, a)
    for s in range(0, ds.count, chunk):
        x = ds.data[s:s + chunk].astype(np.float64)
        if ds.metric == "L2":
            d = np.einsum("ij,ij->i", x, x)[:, None] - 2.0 * (x @ a.T) + a_sq[None, :]
            np.maximum(d, 0.0, out=d)
        else:
            d = -(x @ a.T)
        best[s:s + chunk] = d.min(axis=1)
    if ds.metric == "L2":
        best[anchors] = 0.0
    return np.lexsort((np.arange(ds.count), best))


def _admit(order, sizes, budget):
    csum = np.cumsum(sizes[order])
    return int(np.searchsorted(csum, budget, side="right"))


def select_graph_cache(g: ProximityGraph, ds: VectorDataset, nav, budget_bytes: int, rank=None):
    """Admit adjacency lists in ascending distance-to-nav order until the budget is full."""
    if budget_bytes <= 0:
        return set()
    if rank is None:
        anchors = nav.id_map if nav is not None else [g.entry]
        rank = rank_nodes(ds, anchors)
    sizes = 2 + 4 * g.degrees.astype(np.int64)
    n = _admit(rank, sizes, budget_bytes)
    return set(int(u) for u in rank[:n])


def graph_cache_lists(g: ProximityGraph, ids) -> dict:
    return {int(u): g.adj(u).astype(np.int64) for u in ids}


# -- the plan ---------------------------------------------------------------

@dataclass(eq=False)
class MemoryPlan:
    budget_bytes: int
    M: int
    K: int = 256
    sigma: float = 0.5
    nav_enabled: bool = False
    nav_fraction: float = 0.005
    nav_seed: int = 0
    nav_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    rank: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    n_graph_cache: int = 0
    n_node_cache: int = 0
    pq_bytes: int = 0
    nav_bytes: int = 0
    graph_cache_bytes: int = 0
    node_cache_bytes: int = 0
    proxy: dict = field(default_factory=dict)

    @property
    def graph_cache_ids(self) -> np.ndarray:
        return self.rank[:self.n_graph_cache]

    @property
    def node_cache_ids(self) -> np.ndarray:
        return self.rank[:self.n_node_cache]

    @property
    def used_bytes(self) -> int:
        return self.pq_bytes + self.nav_bytes + self.graph_cache_bytes + self.node_cache_bytes

    def header(self) -> dict:
        h = asdict(self)
        h.pop("rank")
        h["nav_ids"] = [int(i) for i in self.nav_ids]
        return h

    def save(self, path):
        head = json.dumps(self.header(), sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(PLAN_MAGIC)
            f.write(struct.pack("<I", len(head)))
            f.write(head)
            f.write(struct.pack("<I", len(self.rank)))
            f.write(np.asarray(self.rank, dtype="<u4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            raw = f.read()
        if raw[:8] != PLAN_MAGIC:
            raise ValueError(f"{path}: not a plan file")
        (hl,) = struct.unpack_from("<I", raw, 8)
        head = json.loads(raw[12:12 + hl])
        (n,) = struct.unpack_from("<I", raw, 12 + hl)
        rank = np.frombuffer(raw, dtype="<u4", count=n, offset=16 + hl).astype(np.int64)
        head["nav_ids"] = np.asarray(head["nav_ids"], dtype=np.int64)
        return cls(rank=rank, **head)


def plan_memory(ds: VectorDataset, sample_queries, budget_bytes: int, g: ProximityGraph,
                layout_spec=None, M=None, candidate_Ms=None, K: int = 256, sigma: float = 0.5,
                nav_fraction: float = 0.005, pq_fraction: float = 0.01, seed: int = 0,
                recall_target: float = 0.9, k: int = 10, codebook=None, codes=None,
                return_nav: bool = False):
    """Plan memory use under ``budget_bytes``.

    1. compression ratio: M with the fewest block reads at the recall target on a
       pq_fraction sample (skipped when M is given);
    2. navigation index on a nav_fraction sample, kept only if it lowers the
       block-read proxy on ``sample_queries``;
    3. remaining bytes to adjacency lists ranked by distance to the nav nodes,
       then, once every list is cached, to exact vectors by the same ranking.

    ``layout_spec`` is accepted for interface symmetry; the plan does not depend on it.
    """
    del layout_spec
    N = ds.count
    queries = sample_queries.data if isinstance(sample_queries, VectorDataset) else np.asarray(sample_queries)
    cands = sorted(candidate_Ms or default_candidates(ds.dims))
    if M is None:
        smallest = pq_memory_bytes(N, cands[0], K, ds.dims)
        if budget_bytes < smallest:
            raise ValueError(f"budget {budget_bytes} B is below the smallest PQ footprint {smallest} B")
        sample, _ = sample_dataset(ds, sample_fraction(N, pq_fraction, K), seed)
        M = pick_compression_ratio(sample, queries, cands, budget_bytes, corpus_count=N,
                                   K=K, k=min(k, sample.count), recall_target=recall_target,
                                   seed=seed)
    pq_bytes = pq_memory_bytes(N, M, K, ds.dims)
    if budget_bytes < pq_bytes:
        raise ValueError(f"budget {budget_bytes} B cannot hold PQ codes ({pq_bytes} B)")
    plan = MemoryPlan(budget_bytes, M, K, sigma, nav_fraction=nav_fraction, nav_seed=seed,
                      pq_bytes=pq_bytes)
    remaining = budget_bytes - pq_bytes
    nav = None
    if remaining > 0 and int(round(nav_fraction * N)) >= 1:
        nav = build_nav_index(ds, nav_fraction, seed)
        if nav.nbytes() <= remaining:
            if codebook is None or codes is None:
                sample, _ = sample_dataset(ds, sample_fraction(N, pq_fraction, K), seed)
                codebook = train_pq(sample, M, min(K, sample.count), seed=seed)
                codes = encode(codebook, ds)
            gt = ground_truth(ds, queries, min(k, N))
            kk = min(k, N)
            without = io_proxy(ds, g, codebook, codes, queries, gt, kk, recall_target)
            with_nav = io_proxy(ds, g, codebook, codes, queries, gt, kk, recall_target,
                                entries=lambda q: nav.search(q)[0])
            plan.proxy = {"without_nav": without.reads, "with_nav": with_nav.reads}
            if with_nav.reads < without.reads:
                plan.nav_enabled = True
                plan.nav_ids = nav.id_map
                plan.nav_bytes = nav.nbytes()
                remaining -= plan.nav_bytes
    anchors = nav.id_map if plan.nav_enabled else [g.entry]
    plan.rank = rank_nodes(ds, anchors)
    adj_sizes = 2 + 4 * g.degrees.astype(np.int64)
    plan.n_graph_cache = _admit(plan.rank, adj_sizes, remaining)
    plan.graph_cache_bytes = int(adj_sizes[plan.rank[:plan.n_graph_cache]].sum())
    remaining -= plan.graph_cache_bytes
    if plan.n_graph_cache == N and remaining > 0:
        vec_sizes = np.full(N, ds.vector_bytes, dtype=np.int64)
        plan.n_node_cache = _admit(plan.rank, vec_sizes, remaining)
        plan.node_cache_bytes = plan.n_node_cache * ds.vector_bytes
    assert plan.used_bytes <= budget_bytes
    return (plan, nav) if return_nav else plan
