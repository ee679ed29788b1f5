"""Vamana-style proximity graph: construction, medoid and reference greedy search."""

from __future__ import annotations

import bisect
import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .vecio import VectorDataset, distance, distances, prepare_query

_HEADER = struct.Struct("<III")


@dataclass(eq=False)
class ProximityGraph:
    """Adjacency lists stored padded: neighbors[u, :degrees[u]], ascending ids."""

    neighbors: np.ndarray  # (N, R_deg) int32, -1 padded
    degrees: np.ndarray    # (N,) int32
    R_deg: int
    entry: int

    @classmethod
    def from_lists(cls, lists, R_deg=None, entry=0):
        R = R_deg if R_deg is not None else max((len(a) for a in lists), default=0)
        R = max(R, 1)
        nb = np.full((len(lists), R), -1, dtype=np.int32)
        deg = np.zeros(len(lists), dtype=np.int32)
        for u, adj in enumerate(lists):
            adj = sorted(int(v) for v in adj)
            if len(adj) > R:
                raise ValueError(f"node {u} has degree {len(adj)} > R_deg={R}")
            nb[u, :len(adj)] = adj
            deg[u] = len(adj)
        return cls(nb, deg, R, int(entry))

    @property
    def count(self) -> int:
        return self.neighbors.shape[0]

    def adj(self, u) -> np.ndarray:
        return self.neighbors[u, :self.degrees[u]]

    def adjacency_bytes(self, u) -> int:
        """Serialized adjacency size: u16 degree + u32 per neighbor."""
        return 2 + 4 * int(self.degrees[u])

    def total_adjacency_bytes(self) -> int:
        return int(2 * self.count + 4 * self.degrees.sum())

    def check(self):
        n = self.count
        for u in range(n):
            a = self.adj(u)
            if len(a) > self.R_deg:
                raise AssertionError(f"node {u} exceeds degree cap")
            if np.any(a == u):
                raise AssertionError(f"self-loop at {u}")
            if len(np.unique(a)) != len(a):
                raise AssertionError(f"duplicate neighbor at {u}")
            if len(a) and (a.min() < 0 or a.max() >= n):
                raise AssertionError(f"neighbor id out of range at {u}")
        if len(reachable_from(self, self.entry)) != n:
            raise AssertionError("graph is not connected from entry")

    def save(self, path):
        with open(path, "wb") as f:
            f.write(_HEADER.pack(self.count, self.R_deg, self.entry))
            for u in range(self.count):
                d = int(self.degrees[u])
                f.write(struct.pack("<H", d))
                f.write(self.neighbors[u, :d].astype("<u4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            raw = f.read()
        n, R, entry = _HEADER.unpack_from(raw)
        nb = np.full((n, max(R, 1)), -1, dtype=np.int32)
        deg = np.zeros(n, dtype=np.int32)
        pos = _HEADER.size
        for u in range(n):
            (d,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            if d > R:
                raise ValueError(f"{path}: node {u} degree {d} exceeds R_deg={R}")
            nb[u, :d] = np.frombuffer(raw, dtype="<u4", count=d, offset=pos)
            deg[u] = d
            pos += 4 * d
        if pos != len(raw):
            raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
        return cls(nb, deg, R, entry)


def reachable_from(g: ProximityGraph, start: int) -> np.ndarray:
    seen = np.zeros(g.count, dtype=bool)
    seen[start] = True
    q = deque([start])
    while q:
        u = q.popleft()
        for v in g.adj(u):
            if not seen[v]:
                seen[v] = True
                q.append(int(v))
    return np.flatnonzero(seen)


def medoid(ds: VectorDataset) -> int:
    """Vector closest (L2) to the coordinate-wise mean; ties to the smaller id."""
    mean = ds.data.astype(np.float64).mean(axis=0)
    return int(np.argmin(distances(ds.data, mean, "L2")))


class NearestList:
    """Bounded list of (dist, id) sorted ascending, with visited flags."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.items: list = []
        self.visited: set = set()
        self._members: set = set()
        self._cursor = 0

    def __len__(self):
        return len(self.items)

    def __contains__(self, node):
        return node in self._members

    def ids(self):
        return [i for _, i in self.items]

    def insert(self, node: int, dist: float) -> bool:
        if node in self._members:
            return False
        item = (dist, node)
        if len(self.items) == self.capacity and item >= self.items[-1]:
            return False
        pos = bisect.bisect_left(self.items, item)
        self.items.insert(pos, item)
        self._members.add(node)
        if len(self.items) > self.capacity:
            _, dropped = self.items.pop()
            self._members.discard(dropped)
        if pos < self._cursor:
            self._cursor = pos
        return True

    def next_unvisited(self):
        """Nearest unvisited id, or None; does not mark it."""
        items = self.items
        c = self._cursor
        while c < len(items) and items[c][1] in self.visited:
            c += 1
        self._cursor = c
        return items[c][1] if c < len(items) else None

    def mark_visited(self, node):
        self.visited.add(node)

    def has_unvisited(self):
        return self.next_unvisited() is not None


def greedy_search(g: ProximityGraph, ds: VectorDataset, query, D: int, entry=None):
    """Best-first traversal with exact distances; returns (NearestList, visited ids)."""
    q = prepare_query(query, ds.metric)
    start = g.entry if entry is None else entry
    lst = NearestList(D)
    seen = {start}
    lst.insert(start, distance(ds.data[start], q, ds.metric))
    order = []
    while True:
        u = lst.next_unvisited()
        if u is None:
            break
        lst.mark_visited(u)
        order.append(u)
        fresh = [int(v) for v in g.adj(u) if v not in seen]
        seen.update(fresh)
        if fresh:
            d = distances(ds.data[fresh], q, ds.metric)
            for v, dv in zip(fresh, d):
                lst.insert(v, float(dv))
    return lst, order


def robust_prune(ds: VectorDataset, node: int, candidates, alpha: float, R_deg: int):
    """Alpha-pruning: keep the closest remaining p, drop q with alpha*d(p,q) <= d(node,q).

    candidates: iterable of (id, dist-to-node) pairs. Distances are squared L2.
    """
    cand = sorted(((float(d), int(i)) for i, d in candidates))
    cand = [(d, i) for d, i in cand if i != node]
    out = []
    x = ds.data.astype(np.float64)
    while cand and len(out) < R_deg:
        dp, p = cand.pop(0)
        out.append(p)
        cand = [(dq, q) for dq, q in cand if alpha * distance(x[p], x[q]) > dq]
    return out


def _patch_connectivity(g: ProximityGraph, data: np.ndarray):
    n = g.count
    while True:
        reach = np.zeros(n, dtype=bool)
        reach[reachable_from(g, g.entry)] = True
        missing = np.flatnonzero(~reach)
        if len(missing) == 0:
            return
        u = int(missing[0])
        pool = np.flatnonzero(reach)
        d = distances(data[pool], data[u].astype(np.float64), "L2")
        roomy = g.degrees[pool] < g.R_deg
        if roomy.any():
            w = int(pool[roomy][np.argmin(d[roomy])])
            g.neighbors[w, g.degrees[w]] = u
            g.degrees[w] += 1
        else:
            # every reachable node is full: w drops its farthest neighbor x for u,
            # and u links to x so everything reached through w->x stays reachable
            w = int(pool[np.argmin(d)])
            adj = g.adj(w)
            far = int(np.argmax(distances(data[adj], data[w].astype(np.float64), "L2")))
            x = int(adj[far])
            g.neighbors[w, far] = u
            ua = g.adj(u)
            if x not in ua:
                if g.degrees[u] < g.R_deg:
                    g.neighbors[u, g.degrees[u]] = x
                    g.degrees[u] += 1
                else:
                    uf = int(np.argmax(distances(data[ua], data[u].astype(np.float64), "L2")))
                    g.neighbors[u, uf] = x
                g.neighbors[u, :g.degrees[u]] = np.sort(g.adj(u))
        g.neighbors[w, :g.degrees[w]] = np.sort(g.adj(w))


def build_graph(ds: VectorDataset, R_deg: int = 32, L_build: int = 128, alpha: float = 1.2,
                seed: int = 0, saturate: bool = True, slack: float = 1.3) -> ProximityGraph:
    """Two-pass Vamana build (alpha=1 then alpha) from the medoid, then connectivity patch.

    Construction always uses L2 geometry; Cosine data is normalized so this is
    order-equivalent. With ``saturate`` pruned lists are topped up to R_deg with
    the closest pruned candidates. Reverse edges may overfill a list up to
    ``slack * R_deg`` before it is re-pruned; every list is pruned back to
    R_deg at the end of each pass.
    """
    if R_deg < 2:
        raise ValueError("R_deg must be >= 2")
    if L_build < R_deg:
        raise ValueError("L_build must be >= R_deg")
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    n = ds.count
    data = np.ascontiguousarray(ds.data, dtype=np.float32)
    entry = medoid(ds)
    R_eff = min(R_deg, n - 1) if n > 1 else 1
    cap = max(R_eff, int(np.ceil(slack * R_eff)))
    nbrs = np.full((n, cap), -1, dtype=np.int64)
    degs = np.zeros(n, dtype=np.int64)
    if n > 1:
        order = np.random.default_rng(seed).permutation(n).astype(np.int64)
        seen = np.zeros(n, dtype=np.int64)
        stamp = 0
        for a in (1.0, alpha):
            stamp = _kernels.build_pass(data, nbrs, degs, entry, order, L_build,
                                        np.float32(a), R_eff, saturate, seen, stamp)
            _kernels.shrink(data, nbrs, degs, np.float32(a), R_eff, saturate)
    nbrs = nbrs[:, :R_deg] if cap >= R_deg else np.pad(nbrs, ((0, 0), (0, R_deg - cap)),
                                                       constant_values=-1)
    g = ProximityGraph(nbrs.astype(np.int32), degs.astype(np.int32), R_deg, entry)
    for u in range(n):
        g.neighbors[u, :g.degrees[u]] = np.sort(g.adj(u))
    _patch_connectivity(g, data)
    return g
