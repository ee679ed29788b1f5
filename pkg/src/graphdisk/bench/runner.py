"""Artifact build/load and query execution shared by the CLI and the experiment scripts."""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..engine import DiskIndex, SearchParams, search_baseline, search_two_stage
from ..graph import ProximityGraph, build_graph
from ..layout import BlockSpec, LayoutReader, write_layout
from ..planner import MemoryPlan, NavIndex, plan_memory
from ..quantizer import (PQCodebook, default_candidates, encode, load_codes,
                         pick_compression_ratio, pq_memory_bytes, sample_fraction,
                         save_codes, train_pq)
from ..vecio import VectorDataset, compute_recall, sample_dataset

MANIFEST = "manifest.json"


class StageError(RuntimeError):
    """A build or load stage failed; ``stage`` names it."""

    def __init__(self, stage, err):
        super().__init__(f"stage '{stage}' failed: {err}")
        self.stage = stage


@dataclass
class BuildConfig:
    R_deg: int = 32
    L_build: int = 64
    alpha: float = 1.2
    M: int | None = None          # None: pick by the IO proxy
    K: int = 256
    pq_iters: int = 15
    pq_fraction: float = 0.01
    layout_kind: str = "graph_replicated"
    B: int = 4096
    R_pack: int | None = None
    budget_fraction: float = 0.1  # memory budget as a fraction of the raw corpus bytes
    budget_bytes: int | None = None
    sigma: float = 0.5
    nav_fraction: float = 0.005
    recall_target: float = 0.9
    k: int = 10
    seed: int = 0

    def budget(self, ds: VectorDataset) -> int:
        if self.budget_bytes is not None:
            return int(self.budget_bytes)
        return int(self.budget_fraction * ds.count * ds.vector_bytes)


def sha256_file(path, chunk=1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            b = f.read(chunk)
            if not b:
                break
            h.update(b)
    return h.hexdigest()


def sha256_array(a) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


def layout_name(kind):
    return f"layout_{kind}.bin"


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, e) from e


def build_artifacts(ds: VectorDataset, out_dir, cfg: BuildConfig, tune_queries: VectorDataset,
                    tuning_info: dict | None = None, graph: ProximityGraph | None = None,
                    log=print):
    """Graph, PQ, layout and plan for ``ds`` under ``out_dir``; returns the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    p = lambda name: os.path.join(out_dir, name)  # noqa: E731
    t0 = time.perf_counter()
    if graph is None:
        graph = _stage("graph", build_graph, ds, cfg.R_deg, cfg.L_build, cfg.alpha, cfg.seed)
    _stage("graph", graph.save, p("graph.bin"))
    log(f"graph: {graph.count} nodes, mean degree {graph.degrees.mean():.1f} "
        f"({time.perf_counter() - t0:.1f}s)")

    budget = cfg.budget(ds)
    M = cfg.M
    sample, _ = sample_dataset(ds, sample_fraction(ds.count, cfg.pq_fraction, cfg.K), cfg.seed)
    if M is None:
        M = _stage("pq", pick_compression_ratio, sample, tune_queries.data,
                   default_candidates(ds.dims), budget, ds.count, cfg.K, cfg.k,
                   cfg.recall_target, cfg.seed)
    cb = _stage("pq", train_pq, sample, M, min(cfg.K, sample.count), cfg.pq_iters, cfg.seed)
    codes = _stage("pq", encode, cb, ds)
    cb.save(p("pq_codebook.bin"))
    save_codes(codes, p("pq_codes.bin"))
    log(f"pq: M={M}, {pq_memory_bytes(ds.count, M, cb.K, ds.dims)} bytes in memory")

    spec = BlockSpec(cfg.B, cfg.R_pack, cfg.layout_kind)
    stats = _stage("layout", write_layout, graph, ds, spec, None, p(layout_name(cfg.layout_kind)))
    log(f"layout: {cfg.layout_kind}, {stats.bytes} bytes, blow-up {stats.blowup_vs_flat:.2f}, "
        f"R_pack={stats.R_pack}, avg packed {stats.avg_packed:.1f}")

    plan = _stage("plan", plan_memory, ds, tune_queries, budget, graph, spec, M=M, K=cb.K,
                  sigma=cfg.sigma, nav_fraction=cfg.nav_fraction, pq_fraction=cfg.pq_fraction,
                  seed=cfg.seed, recall_target=cfg.recall_target, k=cfg.k, codebook=cb,
                  codes=codes)
    plan.save(p("plan.bin"))
    log(f"plan: budget {budget} B, nav={'on' if plan.nav_enabled else 'off'}, "
        f"graph cache {plan.n_graph_cache} lists, node cache {plan.n_node_cache} vectors")

    names = ["graph.bin", "pq_codebook.bin", "pq_codes.bin", layout_name(cfg.layout_kind), "plan.bin"]
    manifest = {
        "config": asdict(cfg) | {"M": M},
        "corpus": {"count": ds.count, "dims": ds.dims, "scalar": ds.scalar, "metric": ds.metric,
                   "sha256": sha256_array(ds.data)},
        "tuning": tuning_info or {},
        "layout_stats": asdict(stats),
        "artifacts": {n: {"bytes": os.path.getsize(p(n)), "sha256": sha256_file(p(n))} for n in names},
    }
    with open(p(MANIFEST), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def load_manifest(art_dir) -> dict:
    path = os.path.join(art_dir, MANIFEST)
    if not os.path.exists(path):
        raise StageError("load", f"no {MANIFEST} in {art_dir}")
    with open(path) as f:
        return json.load(f)


def verify_artifacts(art_dir, manifest=None):
    manifest = manifest or load_manifest(art_dir)
    for name, meta in manifest["artifacts"].items():
        path = os.path.join(art_dir, name)
        if not os.path.exists(path):
            raise StageError("verify", f"missing artifact {name}")
        if sha256_file(path) != meta["sha256"]:
            raise StageError("verify", f"artifact {name} does not match its manifest hash")
    return manifest


@dataclass
class Artifacts:
    dir: str
    manifest: dict
    graph: ProximityGraph
    codebook: PQCodebook
    codes: np.ndarray
    plan: MemoryPlan
    layout_path: str
    _vectors: dict = field(default_factory=dict)

    @property
    def layout_kind(self):
        return self.manifest["config"]["layout_kind"]

    def vectors(self, ids):
        """Exact vectors read from the layout file (one block read per id, not counted)."""
        missing = [int(u) for u in ids if int(u) not in self._vectors]
        if missing:
            with LayoutReader(self.layout_path) as r:
                for u in missing:
                    self._vectors[u] = r.read_node(u).vector
        return np.stack([self._vectors[int(u)] for u in ids]) if len(ids) else None


def load_artifacts(art_dir, verify=True) -> Artifacts:
    manifest = verify_artifacts(art_dir) if verify else load_manifest(art_dir)
    p = lambda name: os.path.join(art_dir, name)  # noqa: E731
    graph = ProximityGraph.load(p("graph.bin"))
    cb = PQCodebook.load(p("pq_codebook.bin"))
    codes = load_codes(p("pq_codes.bin"), cb.M, cb.K)
    plan = MemoryPlan.load(p("plan.bin"))
    lp = p(layout_name(manifest["config"]["layout_kind"]))
    corpus = manifest["corpus"]
    if graph.count != corpus["count"] or codes.shape[0] != corpus["count"]:
        raise StageError("load", "graph, codes and corpus disagree on the vector count")
    if len(plan.rank) != graph.count:
        raise StageError("load", "plan ranking does not cover the graph")
    return Artifacts(art_dir, manifest, graph, cb, codes, plan, lp)


def rebuild_nav(art: Artifacts) -> NavIndex | None:
    """The navigation graph is rebuilt from the sampled ids recorded in the plan."""
    plan = art.plan
    if not plan.nav_enabled:
        return None
    c = art.manifest["corpus"]
    sample = VectorDataset(art.vectors(plan.nav_ids), c["scalar"], c["metric"])
    R = min(32, max(2, sample.count - 1))
    g = build_graph(sample, R_deg=R, L_build=max(64, R), seed=plan.nav_seed)
    return NavIndex(sample, g, np.asarray(plan.nav_ids), plan.nav_seed, plan.nav_fraction)


def graph_cache_for(art: Artifacts, cache_fraction=None) -> dict:
    """Adjacency lists admitted by rank; ``cache_fraction`` of all adjacency bytes,
    or the plan's own cache when None."""
    g = art.graph
    rank = art.plan.rank
    if cache_fraction is None:
        ids = rank[:art.plan.n_graph_cache]
    else:
        sizes = 2 + 4 * g.degrees.astype(np.int64)
        budget = cache_fraction * sizes.sum()
        n = int(np.searchsorted(np.cumsum(sizes[rank]), budget, side="right"))
        ids = rank[:n]
    return {int(u): g.adj(u).astype(np.int64) for u in ids}


def open_index(art: Artifacts, cache_fraction=None, node_cache=True, nav=None,
               io_threads=16, direct=False) -> DiskIndex:
    gc = graph_cache_for(art, cache_fraction)
    nc = {}
    if node_cache and cache_fraction is None and art.plan.n_node_cache:
        ids = art.plan.node_cache_ids
        nc = dict(zip((int(u) for u in ids), art.vectors(ids)))
    return DiskIndex(LayoutReader(art.layout_path, direct=direct), art.codebook, art.codes,
                     art.graph.entry, gc, nc, nav, io_threads)


def baseline_cache(art: Artifacts, index: DiskIndex, cache_fraction: float) -> dict:
    """Node cache for the single-stage baseline: (vector, adjacency) pairs by rank,
    holding the same number of bytes that ``cache_fraction`` of adjacency lists would."""
    if not cache_fraction:
        return {}
    g = art.graph
    rank = art.plan.rank
    budget = cache_fraction * (2 + 4 * g.degrees.astype(np.int64)).sum()
    vb = index.codebook.dims * (1 if art.manifest["corpus"]["scalar"] == "u8" else 4)
    sizes = vb + 2 + 4 * g.degrees.astype(np.int64)
    n = int(np.searchsorted(np.cumsum(sizes[rank]), budget, side="right"))
    ids = rank[:n]
    vecs = art.vectors(ids) if n else []
    return {int(u): (v, g.adj(u).astype(np.int64)) for u, v in zip(ids, vecs)}


@dataclass
class PointResult:
    results: list
    wall_s: float


def run_queries(index: DiskIndex, queries, params: SearchParams, engine="two_stage",
                threads=1, node_cache=None) -> PointResult:
    """Run every query; with threads > 1, queries are spread over a worker pool."""
    qs = queries.data if isinstance(queries, VectorDataset) else np.asarray(queries)
    if engine == "two_stage":
        fn = lambda q: search_two_stage(q, params, index)  # noqa: E731
    elif engine == "baseline":
        fn = lambda q: search_baseline(q, params, index, node_cache)  # noqa: E731
    else:
        raise ValueError(f"unknown engine {engine!r}")
    t0 = time.perf_counter()
    if threads <= 1:
        out = [fn(q) for q in qs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(fn, qs))
    return PointResult(out, time.perf_counter() - t0)


def summarize(point: PointResult, gt_ids, k) -> dict:
    """Aggregate metrics for one sweep point."""
    rs = point.results
    n = len(rs)
    rec = [compute_recall(r.ids, gt_ids[i], k) for i, r in enumerate(rs)]
    st = [r.stats for r in rs]
    visited = sum(s.visited for s in st)
    lat = np.array([r.latency_ns for r in rs], dtype=np.float64) / 1e3
    mean = lambda a: float(np.mean([getattr(s, a) for s in st])) if n else 0.0  # noqa: E731
    return {
        "recall": float(np.mean(rec)) if n else 0.0,
        "mean_ios": mean("total_reads"),
        "mean_search_reads": mean("search_stage_reads"),
        "mean_refinement_reads": mean("refinement_reads"),
        "mean_visited": mean("visited"),
        "mean_packed_hits": mean("packed_hits"),
        "mean_node_cache_hits": mean("node_cache_hits"),
        "mean_nav_hops": mean("nav_hops"),
        "hit_rate": (sum(s.cache_hits for s in st) / visited) if visited else 0.0,
        "qps": n / point.wall_s if point.wall_s > 0 else math.inf,
        "lat_mean_us": float(lat.mean()) if n else 0.0,
        "lat_p50_us": float(np.percentile(lat, 50)) if n else 0.0,
        "lat_p99_us": float(np.percentile(lat, 99)) if n else 0.0,
    }


def first_reaching(rows, target, key="recall"):
    """The first row (in order) whose ``key`` meets ``target``, or None."""
    for r in rows:
        if r[key] >= target:
            return r
    return None


def eval_query_ids(n_queries, tuning: dict, queries_sha: str, requested=None):
    """Query ids usable for evaluation: tuning ids are excluded when the query file matches."""
    tune = set(tuning.get("ids", [])) if tuning.get("queries_sha256") == queries_sha else set()
    if requested is not None:
        bad = sorted(tune.intersection(int(i) for i in requested))
        if bad:
            raise ValueError(f"evaluation queries overlap the tuning queries: {bad[:10]}")
        return np.asarray(requested, dtype=np.int64)
    return np.asarray([i for i in range(n_queries) if i not in tune], dtype=np.int64)


